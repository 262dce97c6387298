#include "unlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace unlab {

const Tensor& Var::value() const { return tape->value(*this); }

const Tensor& Tape::value(Var v) const {
    if (v.tape != this) throw std::logic_error("var belongs to a different tape");
    return nodes_.at(static_cast<std::size_t>(v.id)).value;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.needs_grad) throw std::logic_error("grad requested for a non-tracked node");
    return n.grad;
}

Tape::Node& Tape::node(Var v) {
    if (v.tape != this) throw std::logic_error("var belongs to a different tape");
    return nodes_.at(static_cast<std::size_t>(v.id));
}

bool Tape::track(Var v) const {
    return nodes_[static_cast<std::size_t>(v.id)].needs_grad;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void()> backprop) {
    if (!value.all_finite()) {
        throw std::runtime_error("non-finite value produced on tape");
    }
    Node n;
    needs_grad = needs_grad && recording_;
    if (needs_grad) n.grad = Tensor::zeros(value.shape);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
    return push(std::move(value), false, {});
}

Var Tape::leaf(Parameter& p) {
    Var v = push(p.value, p.trainable, {});
    if (node(v).needs_grad) node(v).param = &p;
    return v;
}

Var Tape::matmul(Var a, Var b) {
    Tensor out;
    unlab::matmul(a.value(), b.value(), out);
    int ia = a.id, ib = b.id;
    bool ng = track(a) || track(b);
    Var c = push(std::move(out), ng, {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            Node& na = nodes_[ia];
            Node& nb = nodes_[ib];
            const Tensor& dc = nodes_[ic].grad;
            if (na.needs_grad) matmul_nt_acc(dc, nb.value, na.grad);
            if (nb.needs_grad) matmul_tn_acc(na.value, dc, nb.grad);
        };
    }
    return c;
}

Var Tape::transpose(Var a) {
    const Tensor& x = a.value();
    if (x.shape.size() != 2) throw std::invalid_argument("transpose: rank-2 only");
    Tensor out = Tensor::zeros({x.cols(), x.rows()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(j, i) = x.at(i, j);
    int ia = a.id;
    Var c = push(std::move(out), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic] {
            Node& na = nodes_[ia];
            const Tensor& dc = nodes_[ic].grad;
            for (std::size_t i = 0; i < dc.rows(); ++i)
                for (std::size_t j = 0; j < dc.cols(); ++j) na.grad.at(j, i) += dc.at(i, j);
        };
    }
    return c;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

Var Tape::add(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_shape(x, y, "add");
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
    int ia = a.id, ib = b.id;
    Var c = push(std::move(out), track(a) || track(b), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            const Tensor& dc = nodes_[ic].grad;
            if (nodes_[ia].needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ia].grad.data[i] += dc.data[i];
            if (nodes_[ib].needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ib].grad.data[i] += dc.data[i];
        };
    }
    return c;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_shape(x, y, "sub");
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= y.data[i];
    int ia = a.id, ib = b.id;
    Var c = push(std::move(out), track(a) || track(b), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            const Tensor& dc = nodes_[ic].grad;
            if (nodes_[ia].needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ia].grad.data[i] += dc.data[i];
            if (nodes_[ib].needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ib].grad.data[i] -= dc.data[i];
        };
    }
    return c;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_shape(x, y, "mul");
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= y.data[i];
    int ia = a.id, ib = b.id;
    Var c = push(std::move(out), track(a) || track(b), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            const Tensor& dc = nodes_[ic].grad;
            Node& na = nodes_[ia];
            Node& nb = nodes_[ib];
            if (na.needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                    na.grad.data[i] += dc.data[i] * nb.value.data[i];
            if (nb.needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i)
                    nb.grad.data[i] += dc.data[i] * na.value.data[i];
        };
    }
    return c;
}

Var Tape::scale(Var a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) v *= s;
    int ia = a.id;
    Var c = push(std::move(out), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic, s] {
            const Tensor& dc = nodes_[ic].grad;
            for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ia].grad.data[i] += s * dc.data[i];
        };
    }
    return c;
}

Var Tape::add_row_broadcast(Var x, Var bias) {
    const Tensor& m = x.value();
    const Tensor& b = bias.value();
    if (m.shape.size() != 2 || b.numel() != m.cols()) {
        throw std::invalid_argument("add_row_broadcast: bias size must equal column count");
    }
    Tensor out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) += b.data[j];
    int ix = x.id, ib = bias.id;
    Var c = push(std::move(out), track(x) || track(bias), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ix, ib, ic] {
            const Tensor& dc = nodes_[ic].grad;
            if (nodes_[ix].needs_grad)
                for (std::size_t i = 0; i < dc.data.size(); ++i) nodes_[ix].grad.data[i] += dc.data[i];
            if (nodes_[ib].needs_grad) {
                Tensor& db = nodes_[ib].grad;
                for (std::size_t i = 0; i < dc.rows(); ++i)
                    for (std::size_t j = 0; j < dc.cols(); ++j) db.data[j] += dc.at(i, j);
            }
        };
    }
    return c;
}

namespace {
constexpr double kGeluScale = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
} // namespace

Var Tape::gelu(Var a) {
    const Tensor& x = a.value();
    Tensor out = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        double v = x.data[i];
        double t = std::tanh(kGeluScale * (v + kGeluCubic * v * v * v));
        out.data[i] = 0.5 * v * (1.0 + t);
    }
    int ia = a.id;
    Var c = push(std::move(out), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic] {
            Node& na = nodes_[ia];
            const Tensor& dc = nodes_[ic].grad;
            for (std::size_t i = 0; i < dc.data.size(); ++i) {
                double v = na.value.data[i];
                double inner = kGeluScale * (v + kGeluCubic * v * v * v);
                double t = std::tanh(inner);
                double dinner = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
                double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
                na.grad.data[i] += dc.data[i] * d;
            }
        };
    }
    return c;
}

Var Tape::softmax_rows(Var a) {
    const Tensor& x = a.value();
    if (x.shape.size() != 2) throw std::invalid_argument("softmax_rows: rank-2 only");
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            double e = std::exp(x.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= z;
    }
    int ia = a.id;
    Var c = push(std::move(out), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic] {
            Node& nc = nodes_[ic];
            const Tensor& y = nc.value;
            const Tensor& dy = nc.grad;
            Tensor& dx = nodes_[ia].grad;
            for (std::size_t i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) dot += dy.at(i, j) * y.at(i, j);
                for (std::size_t j = 0; j < y.cols(); ++j)
                    dx.at(i, j) += y.at(i, j) * (dy.at(i, j) - dot);
            }
        };
    }
    return c;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& m = x.value();
    const Tensor& g = gain.value();
    const Tensor& b = bias.value();
    if (m.shape.size() != 2 || g.numel() != m.cols() || b.numel() != m.cols()) {
        throw std::invalid_argument("layer_norm: gain/bias must match column count");
    }
    const std::size_t rows = m.rows(), cols = m.cols();
    Tensor out = Tensor::zeros(m.shape);
    Tensor xhat = Tensor::zeros(m.shape);
    std::vector<double> inv_std(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += m.at(i, j);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            double d = m.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat.at(i, j) = (m.at(i, j) - mean) * inv_std[i];
            out.at(i, j) = g.data[j] * xhat.at(i, j) + b.data[j];
        }
    }
    int ix = x.id, ig = gain.id, ib = bias.id;
    Var c = push(std::move(out), track(x) || track(gain) || track(bias), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ix, ig, ib, ic, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)] {
            const Tensor& dy = nodes_[ic].grad;
            const Tensor& g = nodes_[ig].value;
            const std::size_t rows = dy.rows(), cols = dy.cols();
            if (nodes_[ig].needs_grad) {
                Tensor& dg = nodes_[ig].grad;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) dg.data[j] += dy.at(i, j) * xhat.at(i, j);
            }
            if (nodes_[ib].needs_grad) {
                Tensor& db = nodes_[ib].grad;
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) db.data[j] += dy.at(i, j);
            }
            if (nodes_[ix].needs_grad) {
                Tensor& dx = nodes_[ix].grad;
                for (std::size_t i = 0; i < rows; ++i) {
                    double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                        double gdy = g.data[j] * dy.at(i, j);
                        mean_gdy += gdy;
                        mean_gdy_xhat += gdy * xhat.at(i, j);
                    }
                    mean_gdy /= static_cast<double>(cols);
                    mean_gdy_xhat /= static_cast<double>(cols);
                    for (std::size_t j = 0; j < cols; ++j) {
                        double gdy = g.data[j] * dy.at(i, j);
                        dx.at(i, j) +=
                            (gdy - mean_gdy - xhat.at(i, j) * mean_gdy_xhat) * inv_std[i];
                    }
                }
            }
        };
    }
    return c;
}

Var Tape::embedding(Var table, std::span<const int> ids) {
    const Tensor& tab = table.value();
    if (tab.shape.size() != 2) throw std::invalid_argument("embedding: table must be rank-2");
    const std::size_t d = tab.cols();
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= tab.rows()) {
            throw std::out_of_range("embedding: token id out of range");
        }
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tab.at(static_cast<std::size_t>(id), j);
    }
    int it = table.id;
    std::vector<int> ids_copy(ids.begin(), ids.end());
    Var c = push(std::move(out), track(table), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, it, ic, ids_copy = std::move(ids_copy)] {
            const Tensor& dc = nodes_[ic].grad;
            Tensor& dt = nodes_[it].grad;
            const std::size_t d = dc.cols();
            for (std::size_t i = 0; i < ids_copy.size(); ++i)
                for (std::size_t j = 0; j < d; ++j)
                    dt.at(static_cast<std::size_t>(ids_copy[i]), j) += dc.at(i, j);
        };
    }
    return c;
}

Var Tape::causal_masked_scores(Var q, Var k, double score_scale) {
    const Tensor& qm = q.value();
    const Tensor& km = k.value();
    if (qm.shape.size() != 2 || km.shape.size() != 2 || qm.cols() != km.cols() ||
        qm.rows() != km.rows()) {
        throw std::invalid_argument("causal_masked_scores: q and k must be T×dh");
    }
    const std::size_t t = qm.rows(), dh = qm.cols();
    Tensor out = Tensor::full({t, t}, -1e30);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (std::size_t x = 0; x < dh; ++x) acc += qm.at(i, x) * km.at(j, x);
            out.at(i, j) = acc * score_scale;
        }
    }
    int iq = q.id, ik = k.id;
    Var c = push(std::move(out), track(q) || track(k), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, iq, ik, ic, score_scale] {
            const Tensor& ds = nodes_[ic].grad;
            Node& nq = nodes_[iq];
            Node& nk = nodes_[ik];
            const std::size_t t = ds.rows(), dh = nq.value.cols();
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t j = 0; j <= i; ++j) {
                    double g = ds.at(i, j) * score_scale;
                    if (g == 0.0) continue;
                    if (nq.needs_grad)
                        for (std::size_t x = 0; x < dh; ++x)
                            nq.grad.at(i, x) += g * nk.value.at(j, x);
                    if (nk.needs_grad)
                        for (std::size_t x = 0; x < dh; ++x)
                            nk.grad.at(j, x) += g * nq.value.at(i, x);
                }
            }
        };
    }
    return c;
}

Var Tape::mse(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    require_same_shape(x, y, "mse");
    const std::size_t n = x.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = x.data[i] - y.data[i];
        acc += d * d;
    }
    int ia = a.id, ib = b.id;
    Var c = push(Tensor::scalar(acc / static_cast<double>(n)), track(a) || track(b), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            double g = nodes_[ic].grad.data[0];
            Node& na = nodes_[ia];
            Node& nb = nodes_[ib];
            const std::size_t n = na.value.numel();
            double s = 2.0 * g / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                double d = na.value.data[i] - nb.value.data[i];
                if (na.needs_grad) na.grad.data[i] += s * d;
                if (nb.needs_grad) nb.grad.data[i] -= s * d;
            }
        };
    }
    return c;
}

Var Tape::cross_entropy(Var logits, std::span<const int> targets,
                        std::span<const std::uint8_t> mask) {
    const Tensor& x = logits.value();
    if (x.shape.size() != 2 || targets.size() != x.rows() || mask.size() != x.rows()) {
        throw std::invalid_argument("cross_entropy: lengths disagree with logits rows");
    }
    const std::size_t t = x.rows(), v = x.cols();
    std::size_t count = 0;
    for (std::size_t i = 0; i < t; ++i)
        if (mask[i]) ++count;
    if (count == 0) throw std::invalid_argument("cross_entropy: all positions masked out");

    Tensor probs = Tensor::zeros(x.shape); // only masked rows are filled
    double loss = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        int tgt = targets[i];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= v)
            throw std::out_of_range("cross_entropy: target id out of range");
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(x.at(i, j) - mx);
        for (std::size_t j = 0; j < v; ++j) probs.at(i, j) = std::exp(x.at(i, j) - mx) / z;
        loss += std::log(z) + mx - x.at(i, static_cast<std::size_t>(tgt));
    }
    loss /= static_cast<double>(count);

    int il = logits.id;
    std::vector<int> tgt_copy(targets.begin(), targets.end());
    std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
    Var c = push(Tensor::scalar(loss), track(logits), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, il, ic, probs = std::move(probs),
                            tgt_copy = std::move(tgt_copy), mask_copy = std::move(mask_copy),
                            count] {
            double g = nodes_[ic].grad.data[0] / static_cast<double>(count);
            Tensor& dx = nodes_[il].grad;
            const std::size_t t = dx.rows(), v = dx.cols();
            for (std::size_t i = 0; i < t; ++i) {
                if (!mask_copy[i]) continue;
                for (std::size_t j = 0; j < v; ++j) dx.at(i, j) += g * probs.at(i, j);
                dx.at(i, static_cast<std::size_t>(tgt_copy[i])) -= g;
            }
        };
    }
    return c;
}

Var Tape::sum(Var a) {
    const Tensor& x = a.value();
    double acc = 0.0;
    for (double v : x.data) acc += v;
    int ia = a.id;
    Var c = push(Tensor::scalar(acc), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic] {
            double g = nodes_[ic].grad.data[0];
            for (double& v : nodes_[ia].grad.data) v += g;
        };
    }
    return c;
}

Var Tape::l2_norm(Var a) {
    const Tensor& x = a.value();
    double acc = 0.0;
    for (double v : x.data) acc += v * v;
    double norm = std::sqrt(acc);
    int ia = a.id;
    Var c = push(Tensor::scalar(norm), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic] {
            double norm = nodes_[ic].value.data[0];
            if (norm == 0.0) return; // subgradient 0 at the origin
            double g = nodes_[ic].grad.data[0] / norm;
            Node& na = nodes_[ia];
            for (std::size_t i = 0; i < na.value.data.size(); ++i)
                na.grad.data[i] += g * na.value.data[i];
        };
    }
    return c;
}

Var Tape::concat_rows(Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape.size() != 2 || y.shape.size() != 2 || x.cols() != y.cols()) {
        throw std::invalid_argument("concat_rows: column counts differ");
    }
    Tensor out = Tensor::zeros({x.rows() + y.rows(), x.cols()});
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<long>(x.data.size()));
    int ia = a.id, ib = b.id;
    Var c = push(std::move(out), track(a) || track(b), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ib, ic] {
            const Tensor& dc = nodes_[ic].grad;
            Node& na = nodes_[ia];
            Node& nb = nodes_[ib];
            std::size_t split = na.value.data.size();
            if (na.needs_grad)
                for (std::size_t i = 0; i < split; ++i) na.grad.data[i] += dc.data[i];
            if (nb.needs_grad)
                for (std::size_t i = 0; i < nb.value.data.size(); ++i)
                    nb.grad.data[i] += dc.data[split + i];
        };
    }
    return c;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    bool ng = false;
    for (Var p : parts) {
        const Tensor& v = p.value();
        if (v.shape.size() != 2 || v.rows() != rows)
            throw std::invalid_argument("concat_cols: row counts differ");
        total += v.cols();
        ng = ng || track(p);
    }
    Tensor out = Tensor::zeros({rows, total});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& v = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
        off += v.cols();
    }
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    Var c = push(std::move(out), ng, {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ic, ids = std::move(ids)] {
            const Tensor& dc = nodes_[ic].grad;
            std::size_t off = 0;
            for (int id : ids) {
                Node& np = nodes_[id];
                const std::size_t cols = np.value.cols();
                if (np.needs_grad) {
                    for (std::size_t i = 0; i < dc.rows(); ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                            np.grad.at(i, j) += dc.at(i, off + j);
                }
                off += cols;
            }
        };
    }
    return c;
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t len) {
    const Tensor& x = a.value();
    if (x.shape.size() != 2 || start + len > x.cols()) {
        throw std::invalid_argument("slice_cols: range out of bounds");
    }
    Tensor out = Tensor::zeros({x.rows(), len});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);
    int ia = a.id;
    Var c = push(std::move(out), track(a), {});
    if (node(c).needs_grad) {
        int ic = c.id;
        node(c).backprop = [this, ia, ic, start, len] {
            const Tensor& dc = nodes_[ic].grad;
            Tensor& da = nodes_[ia].grad;
            for (std::size_t i = 0; i < dc.rows(); ++i)
                for (std::size_t j = 0; j < len; ++j) da.at(i, start + j) += dc.at(i, j);
        };
    }
    return c;
}

void Tape::backward(Var root) {
    if (!recording_) throw std::logic_error("backward on a non-recording tape");
    if (backward_done_) throw std::logic_error("backward already ran on this tape");
    Node& r = node(root);
    if (!r.value.is_scalar()) throw std::invalid_argument("backward: root must be scalar");
    if (!r.needs_grad) throw std::logic_error("backward: root does not depend on any leaf");
    backward_done_ = true;
    r.grad.data[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad) continue;
        if (n.backprop) n.backprop();
        if (n.param) {
            for (std::size_t j = 0; j < n.grad.data.size(); ++j)
                n.param->grad.data[j] += n.grad.data[j];
        }
    }
}

GradCheckReport finite_diff_check(const std::string& op_name,
                                  const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                                  double tol, double h) {
    Parameter p("x", x);
    Tensor analytic;
    {
        Tape tape;
        Var vx = tape.leaf(p);
        Var out = f(tape, vx);
        if (!out.value().is_scalar()) throw std::invalid_argument("finite_diff_check: f must be scalar");
        if (!out.value().all_finite()) throw std::runtime_error("finite_diff_check: non-finite f(x)");
        tape.backward(out);
        analytic = tape.grad(vx);
    }
    auto eval = [&](const Tensor& pt) {
        Tape tape(false);
        Var vx = tape.constant(pt);
        return f(tape, vx).value().data[0];
    };
    double max_rel = 0.0;
    Tensor pt = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        pt.data[i] = x.data[i] + h;
        double fp = eval(pt);
        pt.data[i] = x.data[i] - h;
        double fm = eval(pt);
        pt.data[i] = x.data[i];
        double numeric = (fp - fm) / (2.0 * h);
        double denom = std::max({std::abs(analytic.data[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic.data[i] - numeric) / denom);
    }
    GradCheckReport rep;
    rep.op_name = op_name;
    rep.max_relative_error = max_rel;
    rep.tolerance = tol;
    rep.passed = max_rel <= tol;
    return rep;
}

} // namespace unlab
