#include "ustd/graph.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include <Eigen/Eigenvalues>

namespace ustd {

void Graph::validate() const {
    if (n_nodes <= 0) throw DataError("graph: node count must be positive");
    if (adjacency.rows() != n_nodes || adjacency.cols() != n_nodes)
        throw DataError("graph: adjacency must be N x N");
    if (!all_finite(adjacency) || adjacency.minCoeff() < 0.0)
        throw DataError("graph: adjacency entries must be finite and non-negative");
}

double default_kernel_sigma(const Mat& coords) {
    const Eigen::Index n = coords.rows();
    if (n < 2) throw DataError("default_kernel_sigma: need at least two nodes");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            dists.push_back((coords.row(i) - coords.row(j)).norm());
    double mean = 0.0;
    for (double d : dists) mean += d;
    mean /= static_cast<double>(dists.size());
    double var = 0.0;
    for (double d : dists) var += (d - mean) * (d - mean);
    var /= static_cast<double>(dists.size());
    return std::sqrt(var);
}

Graph build_adjacency_from_coords(const Mat& coords, double sigma, double epsilon) {
    if (!all_finite(coords)) throw DataError("build_adjacency: non-finite coordinates");
    if (coords.cols() != 2) throw DataError("build_adjacency: coords must be N x 2");
    if (sigma <= 0.0) throw ConfigError("build_adjacency: sigma must be positive");
    if (epsilon < 0.0 || epsilon >= 1.0)
        throw ConfigError("build_adjacency: epsilon must lie in [0,1)");
    const Eigen::Index n = coords.rows();
    Graph g;
    g.n_nodes = static_cast<int>(n);
    g.coords = coords;
    g.adjacency = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            double d2 = (coords.row(i) - coords.row(j)).squaredNorm();
            double w = std::exp(-d2 / (sigma * sigma));
            if (w > epsilon) g.adjacency(i, j) = w;
        }
    }
    g.validate();
    return g;
}

Mat normalize_adjacency(const Graph& g) {
    g.validate();
    const int n = g.n_nodes;
    Mat a_tilde = g.adjacency + Mat::Identity(n, n);
    Eigen::VectorXd deg = a_tilde.rowwise().sum();
    Eigen::VectorXd dinv_sqrt = deg.array().rsqrt();
    return dinv_sqrt.asDiagonal() * a_tilde * dinv_sqrt.asDiagonal();
}

SubgraphSample sample_subgraph(const Graph& g, double rate, Rng& rng) {
    g.validate();
    if (rate <= 0.0 || rate > 1.0) throw ConfigError("sample_subgraph: rate must be in (0,1]");
    int keep = static_cast<int>(std::lround(rate * g.n_nodes));
    if (keep < 1) throw ConfigError("sample_subgraph: rate keeps zero nodes");
    SubgraphSample s;
    s.kept_indices = rng.sample_without_replacement(g.n_nodes, keep);
    s.adjacency.resize(keep, keep);
    for (int i = 0; i < keep; ++i)
        for (int j = 0; j < keep; ++j)
            s.adjacency(i, j) = g.adjacency(s.kept_indices[i], s.kept_indices[j]);
    return s;
}

SpatialEmbedding laplacian_embedding(const Graph& g, int d_s) {
    g.validate();
    if (d_s < 1 || d_s >= g.n_nodes)
        throw ConfigError("laplacian_embedding: need 1 <= d_s < N");
    Mat lap = Mat::Identity(g.n_nodes, g.n_nodes) - normalize_adjacency(g);
    Eigen::SelfAdjointEigenSolver<Mat> solver(lap);
    if (solver.info() != Eigen::Success)
        throw NumericError("laplacian_embedding: eigendecomposition failed");
    // Eigenvalues come back ascending; drop only the first (constant) vector
    // even when the zero eigenvalue has higher multiplicity.
    SpatialEmbedding emb;
    emb.vectors = solver.eigenvectors().middleCols(1, d_s);
    emb.eigenvalues = solver.eigenvalues().segment(1, d_s);
    return emb;
}

void flip_embedding_signs(SpatialEmbedding& emb, Rng& rng) {
    for (Eigen::Index c = 0; c < emb.vectors.cols(); ++c)
        if (rng.uniform() < 0.5) emb.vectors.col(c) *= -1.0;
}

void save_edge_list(const std::string& path, const Graph& g) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "# src,dst,weight\n";
    char buf[64];
    for (int i = 0; i < g.n_nodes; ++i) {
        for (int j = 0; j < g.n_nodes; ++j) {
            if (g.adjacency(i, j) == 0.0) continue;
            std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", i, j, g.adjacency(i, j));
            out << buf;
        }
    }
}

Mat load_edge_list(const std::string& path, int n_nodes) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open adjacency file: " + path);
    Mat a = Mat::Zero(n_nodes, n_nodes);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        int src = 0, dst = 0;
        double w = 0.0;
        if (std::sscanf(line.c_str(), "%d,%d,%lf", &src, &dst, &w) != 3)
            throw DataError("bad edge list line " + std::to_string(lineno) + " in " + path);
        if (src < 0 || src >= n_nodes || dst < 0 || dst >= n_nodes)
            throw DataError("edge index out of range at line " + std::to_string(lineno) +
                            " in " + path);
        a(src, dst) = w;
    }
    return a;
}

void save_coords_csv(const std::string& path, const Graph& g) {
    if (!g.has_coords()) throw DataError("save_coords_csv: graph has no coordinates");
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << "# node_id,x,y\n";
    char buf[96];
    for (int i = 0; i < g.n_nodes; ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", i, g.coords(i, 0), g.coords(i, 1));
        out << buf;
    }
}

Mat load_coords_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open coordinates file: " + path);
    std::vector<std::array<double, 3>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        int id = 0;
        double x = 0.0, y = 0.0;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf", &id, &x, &y) != 3)
            throw DataError("bad coordinates line " + std::to_string(lineno) + " in " + path);
        rows.push_back({static_cast<double>(id), x, y});
    }
    if (rows.empty()) throw DataError("empty coordinates file: " + path);
    Mat coords(rows.size(), 2);
    for (const auto& r : rows) {
        int id = static_cast<int>(r[0]);
        if (id < 0 || id >= static_cast<int>(rows.size()))
            throw DataError("coordinates file ids must be dense 0..N-1: " + path);
        coords(id, 0) = r[1];
        coords(id, 1) = r[2];
    }
    return coords;
}

}  // namespace ustd
