#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ustd/common.hpp"

namespace ustd {

/// Immutable sensor graph: adjacency plus optional planar coordinates.
struct Graph {
    int n_nodes = 0;
    Mat adjacency;  // N x N, entries >= 0, zero diagonal unless self-loops configured
    Mat coords;     // N x 2 when available, otherwise 0 x 2

    bool has_coords() const { return coords.rows() == n_nodes && n_nodes > 0; }
    void validate() const;
};

/// Node subset with the induced adjacency submatrix.
struct SubgraphSample {
    std::vector<int> kept_indices;  // sorted, global indices
    Mat adjacency;                  // |kept| x |kept|
};

/// Laplacian-eigenvector positional encodings.
struct SpatialEmbedding {
    Mat vectors;                  // N x d_s, columns ordered by ascending eigenvalue
    Eigen::VectorXd eigenvalues;  // d_s entries (constant eigenvector excluded)
};

/// Standard deviation of all pairwise Euclidean distances; the default kernel
/// bandwidth for coordinate-derived graphs.
double default_kernel_sigma(const Mat& coords);

/// Thresholded Gaussian kernel: A(i,j) = exp(-dist^2/sigma^2) when above
/// epsilon, else 0; zero diagonal.
Graph build_adjacency_from_coords(const Mat& coords, double sigma, double epsilon);

/// Symmetric renormalized propagation matrix D^{-1/2}(A+I)D^{-1/2}.
Mat normalize_adjacency(const Graph& g);

/// Uniform node subset of size round(rate*N) without replacement.
SubgraphSample sample_subgraph(const Graph& g, double rate, Rng& rng);

/// d_s smallest nontrivial eigenvectors of I - D^{-1/2}(A+I)D^{-1/2}.
SpatialEmbedding laplacian_embedding(const Graph& g, int d_s);

/// Multiply each embedding column by an independent random sign.
void flip_embedding_signs(SpatialEmbedding& emb, Rng& rng);

// -- plain-text interchange --
// Edge list lines "src,dst,weight" (0-indexed); blank lines and '#' comments skipped.
void save_edge_list(const std::string& path, const Graph& g);
Mat load_edge_list(const std::string& path, int n_nodes);
// Coordinates lines "node_id,x,y".
void save_coords_csv(const std::string& path, const Graph& g);
Mat load_coords_csv(const std::string& path);

}  // namespace ustd
