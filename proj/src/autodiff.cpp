#include "ustd/autodiff.hpp"

#include <cmath>

namespace ustd::ad {

Var Tape::emit(Mat value, bool needs_grad, std::function<void(Tape&, int)> backward_fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = track_ && needs_grad;
    if (n.needs_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Mat v) { return emit(std::move(v), false, nullptr); }

Var Tape::param(const Mat& value, Mat* grad_sink) {
    Var v = emit(value, true, nullptr);
    nodes_[v.idx].sink = grad_sink;
    return v;
}

Mat& Tape::grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (!track_) throw std::logic_error("Tape::backward on non-tracking tape");
    if (loss.value().rows() != 1 || loss.value().cols() != 1)
        throw std::invalid_argument("Tape::backward: loss must be 1x1");
    grad(loss.idx).setConstant(1.0);
    for (int i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (n.backward_fn) n.backward_fn(*this, i);
        if (n.sink) *n.sink += n.grad;
    }
}

namespace {

Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw std::logic_error("ad: vars from different tapes");
    return *a.tape;
}

bool any_grad(Tape& t, Var a, Var b) { return t.needs_grad(a.idx) || t.needs_grad(b.idx); }

void check_same_shape(Var a, Var b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "add");
    int ai = a.idx, bi = b.idx;
    return t.emit(a.value() + b.value(), any_grad(t, a, b), [ai, bi](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai)) tp.grad(ai) += g;
        if (tp.needs_grad(bi)) tp.grad(bi) += g;
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "sub");
    int ai = a.idx, bi = b.idx;
    return t.emit(a.value() - b.value(), any_grad(t, a, b), [ai, bi](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai)) tp.grad(ai) += g;
        if (tp.needs_grad(bi)) tp.grad(bi) -= g;
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "mul");
    int ai = a.idx, bi = b.idx;
    return t.emit(a.value().cwiseProduct(b.value()), any_grad(t, a, b),
                  [ai, bi](Tape& tp, int self) {
                      const Mat& g = tp.grad(self);
                      if (tp.needs_grad(ai)) tp.grad(ai) += g.cwiseProduct(tp.value(bi));
                      if (tp.needs_grad(bi)) tp.grad(bi) += g.cwiseProduct(tp.value(ai));
                  });
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    int ai = a.idx;
    return t.emit(a.value() * s, t.needs_grad(ai), [ai, s](Tape& tp, int self) {
        if (tp.needs_grad(ai)) tp.grad(ai) += tp.grad(self) * s;
    });
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()));
    int ai = a.idx, bi = b.idx;
    return t.emit(a.value() * b.value(), any_grad(t, a, b), [ai, bi](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai)) tp.grad(ai) += g * tp.value(bi).transpose();
        if (tp.needs_grad(bi)) tp.grad(bi) += tp.value(ai).transpose() * g;
    });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("add_row: row must be 1x" + std::to_string(a.cols()));
    int ai = a.idx, bi = row.idx;
    Mat v = a.value();
    v.rowwise() += row.value().row(0);
    return t.emit(std::move(v), any_grad(t, a, row), [ai, bi](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai)) tp.grad(ai) += g;
        if (tp.needs_grad(bi)) tp.grad(bi) += g.colwise().sum();
    });
}

Var mul_row(Var a, Var row) {
    Tape& t = tape_of(a, row);
    if (row.rows() != 1 || row.cols() != a.cols())
        throw std::invalid_argument("mul_row: row must be 1x" + std::to_string(a.cols()));
    int ai = a.idx, bi = row.idx;
    Mat v = a.value().array().rowwise() * row.value().row(0).array();
    return t.emit(std::move(v), any_grad(t, a, row), [ai, bi](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai))
            tp.grad(ai).array() += g.array().rowwise() * tp.value(bi).row(0).array();
        if (tp.needs_grad(bi))
            tp.grad(bi) += (g.cwiseProduct(tp.value(ai))).colwise().sum();
    });
}

Var vtanh(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    return t.emit(a.value().array().tanh(), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& y = tp.value(self);
        tp.grad(ai).array() += tp.grad(self).array() * (1.0 - y.array().square());
    });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    return t.emit(std::move(y), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& y = tp.value(self);
        tp.grad(ai).array() += tp.grad(self).array() * y.array() * (1.0 - y.array());
    });
}

Var relu(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    return t.emit(a.value().cwiseMax(0.0), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        tp.grad(ai).array() +=
            tp.grad(self).array() * (tp.value(ai).array() > 0.0).cast<double>();
    });
}

Var silu(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-a.value().array()).exp());
    Mat y = (a.value().array() * s).matrix();
    return t.emit(std::move(y), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        Eigen::ArrayXXd x = tp.value(ai).array();
        Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
        tp.grad(ai).array() += tp.grad(self).array() * (s * (1.0 + x * (1.0 - s)));
    });
}

Var vabs(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    return t.emit(a.value().cwiseAbs(), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        tp.grad(ai).array() += tp.grad(self).array() * tp.value(ai).array().sign();
    });
}

Var sum_all(Var a) {
    Tape& t = *a.tape;
    int ai = a.idx;
    Mat v(1, 1);
    v(0, 0) = a.value().sum();
    return t.emit(std::move(v), t.needs_grad(ai), [ai](Tape& tp, int self) {
        if (tp.needs_grad(ai)) tp.grad(ai).array() += tp.grad(self)(0, 0);
    });
}

Var mean_all(Var a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

Var gather_rows(Var a, std::vector<int> idx) {
    Tape& t = *a.tape;
    int ai = a.idx;
    const Mat& av = a.value();
    Mat v(static_cast<Eigen::Index>(idx.size()), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= av.rows())
            throw std::invalid_argument("gather_rows: index out of range");
        v.row(static_cast<Eigen::Index>(r)) = av.row(idx[r]);
    }
    return t.emit(std::move(v), t.needs_grad(ai),
                  [ai, idx = std::move(idx)](Tape& tp, int self) {
                      if (!tp.needs_grad(ai)) return;
                      const Mat& g = tp.grad(self);
                      Mat& ga = tp.grad(ai);
                      for (std::size_t r = 0; r < idx.size(); ++r)
                          ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
                  });
}

Var concat_rows(Var a, Var b) {
    Tape& t = tape_of(a, b);
    if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
    Mat v(a.rows() + b.rows(), a.cols());
    v.topRows(a.rows()) = a.value();
    v.bottomRows(b.rows()) = b.value();
    int ai = a.idx, bi = b.idx;
    Eigen::Index na = a.rows(), nb = b.rows();
    return t.emit(std::move(v), any_grad(t, a, b), [ai, bi, na, nb](Tape& tp, int self) {
        const Mat& g = tp.grad(self);
        if (tp.needs_grad(ai)) tp.grad(ai) += g.topRows(na);
        if (tp.needs_grad(bi)) tp.grad(bi) += g.bottomRows(nb);
    });
}

Var group_rows(Var a, int g) {
    Tape& t = *a.tape;
    if (g <= 0 || a.rows() % g != 0)
        throw std::invalid_argument("group_rows: rows not divisible by group");
    Eigen::Index n = a.rows() / g, d = a.cols();
    Mat v(n, g * d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int q = 0; q < g; ++q) v.row(i).segment(q * d, d) = a.value().row(i * g + q);
    int ai = a.idx;
    return t.emit(std::move(v), t.needs_grad(ai), [ai, g, n, d](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& gr = tp.grad(self);
        Mat& ga = tp.grad(ai);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int q = 0; q < g; ++q) ga.row(i * g + q) += gr.row(i).segment(q * d, d);
    });
}

Var ungroup_rows(Var a, int g) {
    Tape& t = *a.tape;
    if (g <= 0 || a.cols() % g != 0)
        throw std::invalid_argument("ungroup_rows: cols not divisible by group");
    Eigen::Index n = a.rows(), d = a.cols() / g;
    Mat v(n * g, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int q = 0; q < g; ++q) v.row(i * g + q) = a.value().row(i).segment(q * d, d);
    int ai = a.idx;
    return t.emit(std::move(v), t.needs_grad(ai), [ai, g, n, d](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& gr = tp.grad(self);
        Mat& ga = tp.grad(ai);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int q = 0; q < g; ++q) ga.row(i).segment(q * d, d) += gr.row(i * g + q);
    });
}

Var mean_pool_rows(Var a, int g) {
    Tape& t = *a.tape;
    if (g <= 0 || a.rows() % g != 0)
        throw std::invalid_argument("mean_pool_rows: rows not divisible by group");
    Eigen::Index n = a.rows() / g;
    Mat v = Mat::Zero(n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int q = 0; q < g; ++q) v.row(i) += a.value().row(i * g + q);
        v.row(i) /= g;
    }
    int ai = a.idx;
    return t.emit(std::move(v), t.needs_grad(ai), [ai, g, n](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& gr = tp.grad(self);
        Mat& ga = tp.grad(ai);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int q = 0; q < g; ++q) ga.row(i * g + q) += gr.row(i) / g;
    });
}

Var mix_rows(Var a, const Mat& P, int stride) {
    Tape& t = *a.tape;
    Eigen::Index n = P.rows();
    if (P.cols() != n) throw std::invalid_argument("mix_rows: P must be square");
    if (a.rows() != n * stride)
        throw std::invalid_argument("mix_rows: rows != P.rows()*stride");
    Eigen::Index d = a.cols();
    Mat v(a.rows(), d);
    // Per time offset t: rows {j*stride+t} form an n x d slab mixed by P.
    Mat slab(n, d), mixed(n, d);
    for (int s = 0; s < stride; ++s) {
        for (Eigen::Index j = 0; j < n; ++j) slab.row(j) = a.value().row(j * stride + s);
        mixed.noalias() = P * slab;
        for (Eigen::Index i = 0; i < n; ++i) v.row(i * stride + s) = mixed.row(i);
    }
    int ai = a.idx;
    return t.emit(std::move(v), t.needs_grad(ai), [ai, P, stride, n, d](Tape& tp, int self) {
        if (!tp.needs_grad(ai)) return;
        const Mat& g = tp.grad(self);
        Mat& ga = tp.grad(ai);
        Mat slab(n, d), mixed(n, d);
        for (int s = 0; s < stride; ++s) {
            for (Eigen::Index i = 0; i < n; ++i) slab.row(i) = g.row(i * stride + s);
            mixed.noalias() = P.transpose() * slab;
            for (Eigen::Index j = 0; j < n; ++j) ga.row(j * stride + s) += mixed.row(j);
        }
    });
}

Var layernorm_rows(Var a, double eps) {
    Tape& t = *a.tape;
    Eigen::Index n = a.rows(), d = a.cols();
    Mat y(n, d);
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mu = a.value().row(i).mean();
        Eigen::RowVectorXd c = a.value().row(i).array() - mu;
        double var = c.squaredNorm() / static_cast<double>(d);
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        y.row(i) = c * inv_std(i);
    }
    int ai = a.idx;
    return t.emit(std::move(y), t.needs_grad(ai),
                  [ai, inv_std = std::move(inv_std)](Tape& tp, int self) {
                      if (!tp.needs_grad(ai)) return;
                      const Mat& g = tp.grad(self);
                      const Mat& y = tp.value(self);
                      Mat& ga = tp.grad(ai);
                      for (Eigen::Index i = 0; i < g.rows(); ++i) {
                          double gm = g.row(i).mean();
                          double gy = (g.row(i).cwiseProduct(y.row(i))).mean();
                          ga.row(i) +=
                              inv_std(i) *
                              (g.row(i).array() - gm - y.row(i).array() * gy).matrix();
                      }
                  });
}

namespace {

// Shared attention kernel. Groups=1 with q_per_group=n_q, kv_per_group=n_k
// reproduces full attention.
Var attention_impl(Var q, Var k, Var v, int heads, int groups, int qg, int kg) {
    Tape& t = tape_of(q, k);
    tape_of(k, v);
    Eigen::Index d = q.cols();
    if (k.cols() != d || v.cols() != d)
        throw std::invalid_argument("attention: channel mismatch");
    if (heads <= 0 || d % heads != 0)
        throw std::invalid_argument("attention: channels not divisible by heads");
    if (q.rows() != static_cast<Eigen::Index>(groups) * qg ||
        k.rows() != static_cast<Eigen::Index>(groups) * kg || v.rows() != k.rows())
        throw std::invalid_argument("attention: row/group mismatch");
    Eigen::Index dh = d / heads;
    double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat out(q.rows(), d);
    std::vector<Mat> probs;  // per (group, head): qg x kg
    probs.reserve(static_cast<std::size_t>(groups) * heads);
    for (int gidx = 0; gidx < groups; ++gidx) {
        auto qb = q.value().block(gidx * qg, 0, qg, d);
        auto kb = k.value().block(gidx * kg, 0, kg, d);
        auto vb = v.value().block(gidx * kg, 0, kg, d);
        for (int h = 0; h < heads; ++h) {
            Mat s = qb.middleCols(h * dh, dh) * kb.middleCols(h * dh, dh).transpose() * sc;
            // Row-wise stable softmax.
            Mat p(s.rows(), s.cols());
            for (Eigen::Index r = 0; r < s.rows(); ++r) {
                Eigen::RowVectorXd e = (s.row(r).array() - s.row(r).maxCoeff()).exp();
                p.row(r) = e / e.sum();
            }
            out.block(gidx * qg, h * dh, qg, dh).noalias() = p * vb.middleCols(h * dh, dh);
            probs.push_back(std::move(p));
        }
    }
    if (t.record_attention) {
        Tape::AttentionRecord rec;
        rec.probs = probs;
        rec.score_rows = qg;
        rec.score_cols = kg;
        rec.groups = groups;
        t.attention_log.push_back(std::move(rec));
    }

    int qi = q.idx, ki = k.idx, vi = v.idx;
    bool ng = t.needs_grad(qi) || t.needs_grad(ki) || t.needs_grad(vi);
    return t.emit(std::move(out), ng,
                  [qi, ki, vi, heads, groups, qg, kg, dh, sc,
                   probs = std::move(probs)](Tape& tp, int self) {
                      const Mat& g = tp.grad(self);
                      Eigen::Index d = dh * heads;
                      for (int gidx = 0; gidx < groups; ++gidx) {
                          auto qb = tp.value(qi).block(gidx * qg, 0, qg, d);
                          auto kb = tp.value(ki).block(gidx * kg, 0, kg, d);
                          auto vb = tp.value(vi).block(gidx * kg, 0, kg, d);
                          for (int h = 0; h < heads; ++h) {
                              const Mat& p = probs[static_cast<std::size_t>(gidx) * heads + h];
                              Mat go = g.block(gidx * qg, h * dh, qg, dh);
                              Mat dP = go * vb.middleCols(h * dh, dh).transpose();
                              if (tp.needs_grad(vi))
                                  tp.grad(vi).block(gidx * kg, h * dh, kg, dh).noalias() +=
                                      p.transpose() * go;
                              // softmax backward: dS = p .* (dP - rowsum(dP .* p))
                              Mat dS(p.rows(), p.cols());
                              for (Eigen::Index r = 0; r < p.rows(); ++r) {
                                  double dot = dP.row(r).dot(p.row(r));
                                  dS.row(r) =
                                      (p.row(r).array() * (dP.row(r).array() - dot)).matrix() *
                                      sc;
                              }
                              if (tp.needs_grad(qi))
                                  tp.grad(qi).block(gidx * qg, h * dh, qg, dh).noalias() +=
                                      dS * kb.middleCols(h * dh, dh);
                              if (tp.needs_grad(ki))
                                  tp.grad(ki).block(gidx * kg, h * dh, kg, dh).noalias() +=
                                      dS.transpose() * qb.middleCols(h * dh, dh);
                          }
                      }
                  });
}

}  // namespace

Var attention(Var q, Var k, Var v, int heads) {
    return attention_impl(q, k, v, heads, 1, static_cast<int>(q.rows()),
                          static_cast<int>(k.rows()));
}

Var grouped_attention(Var q, Var k, Var v, int heads, int q_per_group, int kv_per_group) {
    if (q_per_group <= 0 || kv_per_group <= 0)
        throw std::invalid_argument("grouped_attention: group sizes must be positive");
    if (q.rows() % q_per_group != 0)
        throw std::invalid_argument("grouped_attention: q rows not divisible by group");
    int groups = static_cast<int>(q.rows()) / q_per_group;
    return attention_impl(q, k, v, heads, groups, q_per_group, kv_per_group);
}

}  // namespace ustd::ad
