#include "dygex/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "dygex/errors.hpp"
#include "dygex/threading.hpp"

namespace dygex {

namespace {

// C += A * B (or C = A * B when accumulate is false); A is m x k, B is k x n.
// Rows of C are partitioned across threads and each entry is accumulated in a
// fixed serial order, so the result is identical for any thread count.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool accumulate) {
    parallel_for(m, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* ci = c + i * n;
            if (!accumulate) std::fill(ci, ci + n, 0.0);
            const double* ai = a + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = ai[kk];
                const double* bk = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
            }
        }
    });
}

void gemm(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
    gemm(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols(),
         accumulate);
}

Tensor transposed(const Tensor& t) {
    Tensor out(t.cols(), t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out.at(j, i) = t.at(i, j);
    return out;
}

}  // namespace

Tape::Var Tape::push(Tensor value, std::vector<int> inputs, const char* op,
                     std::function<void(Tape&, int)> back) {
    if (check_numerics_) check_value(value, op);
    Node node;
    node.value = std::move(value);
    node.inputs = std::move(inputs);
    node.op = op;
    node.requires_grad = needs(node.inputs);
    if (node.requires_grad) node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::needs(const std::vector<int>& inputs) const {
    for (int id : inputs)
        if (nodes_[id].requires_grad) return true;
    return false;
}

void Tape::check_value(const Tensor& t, const char* op) const {
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + op);
}

Tape::Var Tape::constant(Tensor value) {
    return push(std::move(value), {}, "constant", nullptr);
}

Tape::Var Tape::leaf(const Tensor& value) {
    if (check_numerics_) check_value(value, "leaf");
    Node node;
    node.value = value;
    node.op = "leaf";
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::has_grad(Var v) const {
    return v.valid() && v.id < static_cast<int>(grads_.size()) && !grads_[v.id].empty();
}

const Tensor& Tape::grad(Var v) const {
    if (!has_grad(v)) throw std::logic_error("grad: node has no materialized gradient");
    return grads_[v.id];
}

Tensor Tape::grad_or_zero(Var v) const {
    if (has_grad(v)) return grads_[v.id];
    const Tensor& value = val(v);
    return Tensor(value.rows(), value.cols());
}

Tensor& Tape::grad_buf(int id) {
    Tensor& g = grads_[id];
    if (g.empty()) {
        const Tensor& value = nodes_[id].value;
        g = Tensor(value.rows(), value.cols());
    }
    return g;
}

void Tape::add_grad(int id, const Tensor& g) {
    Tensor& buf = grad_buf(id);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
        throw std::logic_error("backward: invalid loss handle");
    if (nodes_[loss.id].value.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         nodes_[loss.id].value.shape_str());
    grads_.assign(nodes_.size(), Tensor());
    grads_[loss.id] = Tensor::scalar(1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& node = nodes_[id];
        if (grads_[id].empty() || !node.back) continue;
        if (check_numerics_) {
            for (double v : grads_[id].data())
                if (!std::isfinite(v))
                    throw NumericError(std::string("non-finite gradient flowing into ") +
                                       node.op);
        }
        node.back(*this, id);
    }
}

void Tape::dump(std::ostream& os) const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        os << id << ": " << n.op << " " << n.value.shape_str()
           << (n.requires_grad ? " grad" : "") << " <-";
        for (int in : n.inputs) os << " " << in;
        os << "\n";
    }
}

// ---- elementwise / broadcast ----

Tape::Var Tape::add(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return push(std::move(out), {a.id, b.id}, "add", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) t.add_grad(in[0], g);
        if (t.nodes_[in[1]].requires_grad) t.add_grad(in[1], g);
    });
}

Tape::Var Tape::sub(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return push(std::move(out), {a.id, b.id}, "sub", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) t.add_grad(in[0], g);
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
        }
    });
}

Tape::Var Tape::mul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return push(std::move(out), {a.id, b.id}, "mul", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& av = t.nodes_[in[0]].value;
        const Tensor& bv = t.nodes_[in[1]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * bv[i];
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * av[i];
        }
    });
}

Tape::Var Tape::div(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("div: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    return push(std::move(out), {a.id, b.id}, "div", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        const Tensor& bv = t.nodes_[in[1]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] / bv[i];
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i] * y[i] / bv[i];
        }
    });
}

Tape::Var Tape::add_rowvec(Var x, Var bias) {
    const Tensor& xv = val(x);
    const Tensor& bv = val(bias);
    if (bv.rows() != 1 || bv.cols() != xv.cols())
        throw ShapeError("add_rowvec: bias " + bv.shape_str() + " does not match " +
                         xv.shape_str());
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) = xv.at(i, j) + bv[j];
    return push(std::move(out), {x.id, bias.id}, "add_rowvec", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) t.add_grad(in[0], g);
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
        }
    });
}

Tape::Var Tape::affine(Var x, double scale, double shift) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
    return push(std::move(out), {x.id}, "affine", [scale](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += scale * g[i];
        }
    });
}

Tape::Var Tape::leaky_relu(Var x, double slope) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
    return push(std::move(out), {x.id}, "leaky_relu", [slope](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
        }
    });
}

Tape::Var Tape::logistic(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xv[i];
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    return push(std::move(out), {x.id}, "logistic", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
        }
    });
}

Tape::Var Tape::tanh(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
    return push(std::move(out), {x.id}, "tanh", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
        }
    });
}

Tape::Var Tape::exp(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
    return push(std::move(out), {x.id}, "exp", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i];
        }
    });
}

Tape::Var Tape::log(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
    return push(std::move(out), {x.id}, "log", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] / xv[i];
        }
    });
}

Tape::Var Tape::sqrt(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xv[i]);
    return push(std::move(out), {x.id}, "sqrt", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * 0.5 / y[i];
        }
    });
}

Tape::Var Tape::clamp01(Var x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(1.0, std::max(0.0, xv[i]));
    return push(std::move(out), {x.id}, "clamp01", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            // zero subgradient on the clipped flats
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (xv[i] > 0.0 && xv[i] < 1.0) dx[i] += g[i];
        }
    });
}

// ---- linear algebra ----

Tape::Var Tape::matmul(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out(av.rows(), bv.cols());
    gemm(av, bv, out, false);
    return push(std::move(out), {a.id, b.id}, "matmul", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& av = t.nodes_[in[0]].value;
        const Tensor& bv = t.nodes_[in[1]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor bt = transposed(bv);
            gemm(g, bt, t.grad_buf(in[0]), true);
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor at = transposed(av);
            gemm(at, g, t.grad_buf(in[1]), true);
        }
    });
}

Tape::Var Tape::linear(Var x, Var w) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    if (xv.cols() != wv.cols())
        throw ShapeError("linear: input " + xv.shape_str() + " does not match weight " +
                         wv.shape_str());
    Tensor wt = transposed(wv);
    Tensor out(xv.rows(), wv.rows());
    gemm(xv, wt, out, false);
    return push(std::move(out), {x.id, w.id}, "linear", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        const Tensor& wv = t.nodes_[in[1]].value;
        if (t.nodes_[in[0]].requires_grad) gemm(g, wv, t.grad_buf(in[0]), true);
        if (t.nodes_[in[1]].requires_grad) {
            Tensor gt = transposed(g);
            gemm(gt, xv, t.grad_buf(in[1]), true);
        }
    });
}

// ---- reductions and glue ----

Tape::Var Tape::sum(Var x) {
    const Tensor& xv = val(x);
    double acc = 0.0;
    for (double v : xv.data()) acc += v;
    return push(Tensor::scalar(acc), {x.id}, "sum", [](Tape& t, int self) {
        const double g = t.grads_[self].item();
        const auto& in = t.nodes_[self].inputs;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        }
    });
}

Tape::Var Tape::mean(Var x) {
    const Tensor& xv = val(x);
    double acc = 0.0;
    for (double v : xv.data()) acc += v;
    return push(Tensor::scalar(acc / static_cast<double>(xv.size())), {x.id}, "mean",
                [](Tape& t, int self) {
                    const auto& in = t.nodes_[self].inputs;
                    const Tensor& xv = t.nodes_[in[0]].value;
                    const double g =
                        t.grads_[self].item() / static_cast<double>(xv.size());
                    if (t.nodes_[in[0]].requires_grad) {
                        Tensor& dx = t.grad_buf(in[0]);
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
                    }
                });
}

Tape::Var Tape::dot(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("dot: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    return push(Tensor::scalar(acc), {a.id, b.id}, "dot", [](Tape& t, int self) {
        const double g = t.grads_[self].item();
        const auto& in = t.nodes_[self].inputs;
        const Tensor& av = t.nodes_[in[0]].value;
        const Tensor& bv = t.nodes_[in[1]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * bv[i];
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * av[i];
        }
    });
}

Tape::Var Tape::logsumexp(Var x) {
    const Tensor& xv = val(x);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : xv.data()) m = std::max(m, v);
    double s = 0.0;
    for (double v : xv.data()) s += std::exp(v - m);
    return push(Tensor::scalar(m + std::log(s)), {x.id}, "logsumexp", [](Tape& t, int self) {
        const double g = t.grads_[self].item();
        const double y = t.nodes_[self].value.item();
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& dx = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * std::exp(xv[i] - y);
        }
    });
}

Tape::Var Tape::concat_cols(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.rows() != bv.rows())
        throw ShapeError("concat_cols: row counts disagree, " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out(av.rows(), av.cols() + bv.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j);
        for (std::size_t j = 0; j < bv.cols(); ++j) out.at(i, av.cols() + j) = bv.at(i, j);
    }
    return push(std::move(out), {a.id, b.id}, "concat_cols", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const std::size_t p = t.nodes_[in[0]].value.cols();
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < da.rows(); ++i)
                for (std::size_t j = 0; j < da.cols(); ++j) da.at(i, j) += g.at(i, j);
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.rows(); ++i)
                for (std::size_t j = 0; j < db.cols(); ++j) db.at(i, j) += g.at(i, p + j);
        }
    });
}

Tape::Var Tape::concat_rows(Var a, Var b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.cols() != bv.cols())
        throw ShapeError("concat_rows: column counts disagree, " + av.shape_str() + " vs " +
                         bv.shape_str());
    Tensor out(av.rows() + bv.rows(), av.cols());
    std::copy(av.data().begin(), av.data().end(), out.data().begin());
    std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + av.size());
    return push(std::move(out), {a.id, b.id}, "concat_rows", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const std::size_t na = t.nodes_[in[0]].value.size();
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& db = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[na + i];
        }
    });
}

Tape::Var Tape::hstack(const std::vector<Var>& columns) {
    if (columns.empty()) throw ShapeError("hstack: no columns given");
    const std::size_t n = val(columns[0]).rows();
    std::vector<int> inputs;
    inputs.reserve(columns.size());
    for (Var c : columns) {
        const Tensor& cv = val(c);
        if (cv.cols() != 1 || cv.rows() != n)
            throw ShapeError("hstack: expected " + std::to_string(n) + "x1 column, got " +
                             cv.shape_str());
        inputs.push_back(c.id);
    }
    Tensor out(n, columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
        const Tensor& cv = val(columns[j]);
        for (std::size_t i = 0; i < n; ++i) out.at(i, j) = cv[i];
    }
    return push(std::move(out), std::move(inputs), "hstack", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        for (std::size_t j = 0; j < in.size(); ++j) {
            if (!t.nodes_[in[j]].requires_grad) continue;
            Tensor& dc = t.grad_buf(in[j]);
            for (std::size_t i = 0; i < dc.rows(); ++i) dc[i] += g.at(i, j);
        }
    });
}

Tape::Var Tape::stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("stack_scalars: no inputs given");
    std::vector<int> inputs;
    inputs.reserve(xs.size());
    Tensor out(xs.size(), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i] = val(xs[i]).item();
        inputs.push_back(xs[i].id);
    }
    return push(std::move(out), std::move(inputs), "stack_scalars", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (!t.nodes_[in[i]].requires_grad) continue;
            t.grad_buf(in[i])[0] += g[i];
        }
    });
}

Tape::Var Tape::gather_rows(Var x, std::vector<int> idx) {
    const Tensor& xv = val(x);
    if (idx.empty()) throw ShapeError("gather_rows: empty index list");
    for (int r : idx)
        if (r < 0 || r >= static_cast<int>(xv.rows()))
            throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                             xv.shape_str());
    Tensor out(idx.size(), xv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(xv.row_ptr(idx[i]), xv.row_ptr(idx[i]) + xv.cols(), out.row_ptr(i));
    return push(std::move(out), {x.id}, "gather_rows",
                [idx = std::move(idx)](Tape& t, int self) {
                    const Tensor& g = t.grads_[self];
                    const auto& in = t.nodes_[self].inputs;
                    if (!t.nodes_[in[0]].requires_grad) return;
                    Tensor& dx = t.grad_buf(in[0]);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                        double* dst = dx.row_ptr(idx[i]);
                        const double* src = g.row_ptr(i);
                        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
                    }
                });
}

Tape::Var Tape::pad_to(Var x, std::size_t rows, std::size_t cols) {
    const Tensor& xv = val(x);
    if (rows < xv.rows() || cols < xv.cols())
        throw ShapeError("pad_to: target " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " smaller than " + xv.shape_str());
    Tensor out(rows, cols);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        std::copy(xv.row_ptr(i), xv.row_ptr(i) + xv.cols(), out.row_ptr(i));
    return push(std::move(out), {x.id}, "pad_to", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (!t.nodes_[in[0]].requires_grad) return;
        Tensor& dx = t.grad_buf(in[0]);
        for (std::size_t i = 0; i < dx.rows(); ++i)
            for (std::size_t j = 0; j < dx.cols(); ++j) dx.at(i, j) += g.at(i, j);
    });
}

Tape::Var Tape::pad_bottom_right(Var x, std::size_t rows, std::size_t cols) {
    const Tensor& xv = val(x);
    if (rows < xv.rows() || cols < xv.cols())
        throw ShapeError("pad_bottom_right: target " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " smaller than " + xv.shape_str());
    const std::size_t ro = rows - xv.rows();
    const std::size_t co = cols - xv.cols();
    Tensor out(rows, cols);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        std::copy(xv.row_ptr(i), xv.row_ptr(i) + xv.cols(), out.row_ptr(i + ro) + co);
    return push(std::move(out), {x.id}, "pad_bottom_right", [ro, co](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        if (!t.nodes_[in[0]].requires_grad) return;
        Tensor& dx = t.grad_buf(in[0]);
        for (std::size_t i = 0; i < dx.rows(); ++i)
            for (std::size_t j = 0; j < dx.cols(); ++j) dx.at(i, j) += g.at(i + ro, j + co);
    });
}

Tape::Var Tape::scatter_rows(Var values, std::vector<int> row_idx, std::vector<int> col_idx,
                             std::size_t rows, std::size_t cols) {
    const Tensor& vv = val(values);
    if (vv.cols() != 1)
        throw ShapeError("scatter_rows: values must be a column vector, got " + vv.shape_str());
    if (row_idx.size() != vv.rows() || col_idx.size() != vv.rows())
        throw ShapeError("scatter_rows: " + std::to_string(vv.rows()) + " values vs " +
                         std::to_string(row_idx.size()) + "/" + std::to_string(col_idx.size()) +
                         " indices");
    for (std::size_t e = 0; e < row_idx.size(); ++e)
        if (row_idx[e] < 0 || row_idx[e] >= static_cast<int>(rows) || col_idx[e] < 0 ||
            col_idx[e] >= static_cast<int>(cols))
            throw IndexError("scatter_rows: entry (" + std::to_string(row_idx[e]) + ", " +
                             std::to_string(col_idx[e]) + ") outside " + std::to_string(rows) +
                             "x" + std::to_string(cols));
    Tensor out(rows, cols);
    for (std::size_t e = 0; e < row_idx.size(); ++e) out.at(row_idx[e], col_idx[e]) += vv[e];
    return push(std::move(out), {values.id}, "scatter_rows",
                [row_idx = std::move(row_idx), col_idx = std::move(col_idx)](Tape& t, int self) {
                    const Tensor& g = t.grads_[self];
                    const auto& in = t.nodes_[self].inputs;
                    if (!t.nodes_[in[0]].requires_grad) return;
                    Tensor& dv = t.grad_buf(in[0]);
                    for (std::size_t e = 0; e < row_idx.size(); ++e)
                        dv[e] += g.at(row_idx[e], col_idx[e]);
                });
}

Tape::Var Tape::row_normalize(Var x, double eps) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) sq += xv.at(i, j) * xv.at(i, j);
        const double denom = std::max(eps, std::sqrt(sq));
        for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) = xv.at(i, j) / denom;
    }
    return push(std::move(out), {x.id}, "row_normalize", [eps](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        const Tensor& xv = t.nodes_[in[0]].value;
        if (!t.nodes_[in[0]].requires_grad) return;
        Tensor& dx = t.grad_buf(in[0]);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < xv.cols(); ++j) sq += xv.at(i, j) * xv.at(i, j);
            const double nrm = std::sqrt(sq);
            const double denom = std::max(eps, nrm);
            if (nrm > eps) {
                double gy = 0.0;
                for (std::size_t j = 0; j < xv.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
                for (std::size_t j = 0; j < xv.cols(); ++j)
                    dx.at(i, j) += (g.at(i, j) - gy * y.at(i, j)) / denom;
            } else {
                // below the floor the norm is treated as a constant
                for (std::size_t j = 0; j < xv.cols(); ++j) dx.at(i, j) += g.at(i, j) / denom;
            }
        }
    });
}

// ---- softmax family ----

Tape::Var Tape::masked_softmax(Var x, Tensor mask) {
    const Tensor& xv = val(x);
    if (!xv.same_shape(mask))
        throw ShapeError("masked_softmax: mask " + mask.shape_str() + " does not match " +
                         xv.shape_str());
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < xv.cols(); ++j)
            if (mask.at(i, j) != 0.0) m = std::max(m, xv.at(i, j));
        if (m == -std::numeric_limits<double>::infinity())
            throw NumericError("masked_softmax: row " + std::to_string(i) + " is fully masked");
        double s = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j)
            if (mask.at(i, j) != 0.0) s += std::exp(xv.at(i, j) - m);
        for (std::size_t j = 0; j < xv.cols(); ++j)
            out.at(i, j) = mask.at(i, j) != 0.0 ? std::exp(xv.at(i, j) - m) / s : 0.0;
    }
    // masked entries are exactly zero in the output, so the backward pass can
    // use the output alone: those positions contribute nothing either way.
    return push(std::move(out), {x.id}, "masked_softmax", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const Tensor& y = t.nodes_[self].value;
        const auto& in = t.nodes_[self].inputs;
        if (!t.nodes_[in[0]].requires_grad) return;
        Tensor& dx = t.grad_buf(in[0]);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                dx.at(i, j) += y.at(i, j) * (g.at(i, j) - gy);
        }
    });
}

Tape::Var Tape::segment_softmax(Var x, std::vector<int> segments, int num_segments) {
    const Tensor& xv = val(x);
    if (xv.cols() != 1)
        throw ShapeError("segment_softmax: expected a column vector, got " + xv.shape_str());
    if (segments.size() != xv.rows())
        throw ShapeError("segment_softmax: " + std::to_string(segments.size()) +
                         " segment ids for " + std::to_string(xv.rows()) + " entries");
    for (int s : segments)
        if (s < 0 || s >= num_segments)
            throw IndexError("segment_softmax: segment id " + std::to_string(s) +
                             " out of range");
    std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < segments.size(); ++e)
        mx[segments[e]] = std::max(mx[segments[e]], xv[e]);
    std::vector<double> sums(num_segments, 0.0);
    for (std::size_t e = 0; e < segments.size(); ++e)
        sums[segments[e]] += std::exp(xv[e] - mx[segments[e]]);
    Tensor out(xv.rows(), 1);
    for (std::size_t e = 0; e < segments.size(); ++e)
        out[e] = std::exp(xv[e] - mx[segments[e]]) / sums[segments[e]];
    return push(std::move(out), {x.id}, "segment_softmax",
                [segments = std::move(segments), num_segments](Tape& t, int self) {
                    const Tensor& g = t.grads_[self];
                    const Tensor& y = t.nodes_[self].value;
                    const auto& in = t.nodes_[self].inputs;
                    if (!t.nodes_[in[0]].requires_grad) return;
                    std::vector<double> gy(num_segments, 0.0);
                    for (std::size_t e = 0; e < segments.size(); ++e)
                        gy[segments[e]] += g[e] * y[e];
                    Tensor& dx = t.grad_buf(in[0]);
                    for (std::size_t e = 0; e < segments.size(); ++e)
                        dx[e] += y[e] * (g[e] - gy[segments[e]]);
                });
}

// ---- graph-structured kernels ----

Tape::Var Tape::edge_combine(Var gates, Var x, std::vector<int> to, std::vector<int> from,
                             std::size_t out_rows) {
    const Tensor& gv = val(gates);
    const Tensor& xv = val(x);
    if (gv.cols() != 1)
        throw ShapeError("edge_combine: gates must be a column vector, got " + gv.shape_str());
    if (to.size() != from.size() || to.size() != gv.rows())
        throw ShapeError("edge_combine: " + std::to_string(gv.rows()) + " gates for " +
                         std::to_string(to.size()) + "/" + std::to_string(from.size()) +
                         " endpoints");
    if (out_rows == 0) throw ShapeError("edge_combine: zero output rows");
    for (std::size_t e = 0; e < to.size(); ++e) {
        if (to[e] < 0 || to[e] >= static_cast<int>(out_rows))
            throw IndexError("edge_combine: destination " + std::to_string(to[e]) +
                             " out of range");
        if (from[e] < 0 || from[e] >= static_cast<int>(xv.rows()))
            throw IndexError("edge_combine: source " + std::to_string(from[e]) +
                             " out of range");
    }
    Tensor out(out_rows, xv.cols());
    for (std::size_t e = 0; e < to.size(); ++e) {
        double* dst = out.row_ptr(to[e]);
        const double* src = xv.row_ptr(from[e]);
        const double w = gv[e];
        for (std::size_t j = 0; j < xv.cols(); ++j) dst[j] += w * src[j];
    }
    return push(std::move(out), {gates.id, x.id}, "edge_combine",
                [to = std::move(to), from = std::move(from)](Tape& t, int self) {
                    const Tensor& g = t.grads_[self];
                    const auto& in = t.nodes_[self].inputs;
                    const Tensor& gv = t.nodes_[in[0]].value;
                    const Tensor& xv = t.nodes_[in[1]].value;
                    if (t.nodes_[in[0]].requires_grad) {
                        Tensor& dg = t.grad_buf(in[0]);
                        for (std::size_t e = 0; e < to.size(); ++e) {
                            const double* go = g.row_ptr(to[e]);
                            const double* src = xv.row_ptr(from[e]);
                            double acc = 0.0;
                            for (std::size_t j = 0; j < xv.cols(); ++j) acc += go[j] * src[j];
                            dg[e] += acc;
                        }
                    }
                    if (t.nodes_[in[1]].requires_grad) {
                        Tensor& dx = t.grad_buf(in[1]);
                        for (std::size_t e = 0; e < to.size(); ++e) {
                            const double* go = g.row_ptr(to[e]);
                            double* dst = dx.row_ptr(from[e]);
                            const double w = gv[e];
                            for (std::size_t j = 0; j < xv.cols(); ++j) dst[j] += w * go[j];
                        }
                    }
                });
}

Tape::Var Tape::rows_outer_sum(Var u, Var v) {
    const Tensor& uv = val(u);
    const Tensor& vv = val(v);
    if (!uv.same_shape(vv))
        throw ShapeError("rows_outer_sum: shape mismatch " + uv.shape_str() + " vs " +
                         vv.shape_str());
    const std::size_t n = uv.rows();
    const std::size_t b = uv.cols();
    Tensor out(n * b, b);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < b; ++k) {
            double* row = out.row_ptr(i * b + k);
            const double uik = uv.at(i, k);
            for (std::size_t j = 0; j < b; ++j) row[j] = uik + vv.at(i, j);
        }
    return push(std::move(out), {u.id, v.id}, "rows_outer_sum", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const std::size_t b = t.nodes_[in[0]].value.cols();
        const std::size_t n = t.nodes_[in[0]].value.rows();
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& du = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < b; ++k) {
                    const double* row = g.row_ptr(i * b + k);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < b; ++j) acc += row[j];
                    du.at(i, k) += acc;
                }
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& dv = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < b; ++k) {
                    const double* row = g.row_ptr(i * b + k);
                    for (std::size_t j = 0; j < b; ++j) dv.at(i, j) += row[j];
                }
        }
    });
}

Tape::Var Tape::block_matmul(Var a, Var s, std::size_t block) {
    const Tensor& av = val(a);
    const Tensor& sv = val(s);
    if (block == 0 || av.cols() != block || av.rows() % block != 0 || sv.rows() != av.rows())
        throw ShapeError("block_matmul: incompatible shapes " + av.shape_str() + ", " +
                         sv.shape_str() + " with block " + std::to_string(block));
    const std::size_t n = av.rows() / block;
    const std::size_t k = sv.cols();
    Tensor out(av.rows(), k);
    parallel_for(n, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
            gemm(av.row_ptr(i * block), sv.row_ptr(i * block), out.row_ptr(i * block), block,
                 block, k, false);
    });
    return push(std::move(out), {a.id, s.id}, "block_matmul", [block](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const Tensor& av = t.nodes_[in[0]].value;
        const Tensor& sv = t.nodes_[in[1]].value;
        const std::size_t n = av.rows() / block;
        const std::size_t k = sv.cols();
        if (t.nodes_[in[0]].requires_grad) {
            Tensor& da = t.grad_buf(in[0]);
            for (std::size_t i = 0; i < n; ++i) {
                // da_i += g_i * s_i^T
                for (std::size_t r = 0; r < block; ++r) {
                    const double* gr = g.row_ptr(i * block + r);
                    double* dar = da.row_ptr(i * block + r);
                    for (std::size_t c = 0; c < block; ++c) {
                        const double* sc = sv.row_ptr(i * block + c);
                        double acc = 0.0;
                        for (std::size_t j = 0; j < k; ++j) acc += gr[j] * sc[j];
                        dar[c] += acc;
                    }
                }
            }
        }
        if (t.nodes_[in[1]].requires_grad) {
            Tensor& ds = t.grad_buf(in[1]);
            for (std::size_t i = 0; i < n; ++i) {
                // ds_i += a_i^T * g_i
                for (std::size_t r = 0; r < block; ++r) {
                    const double* ar = av.row_ptr(i * block + r);
                    const double* gr = g.row_ptr(i * block + r);
                    for (std::size_t c = 0; c < block; ++c) {
                        double* dsc = ds.row_ptr(i * block + c);
                        const double w = ar[c];
                        for (std::size_t j = 0; j < k; ++j) dsc[j] += w * gr[j];
                    }
                }
            }
        }
    });
}

Tape::Var Tape::interleave_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("interleave_rows: no inputs given");
    const Tensor& first = val(xs[0]);
    std::vector<int> inputs;
    inputs.reserve(xs.size());
    for (Var x : xs) {
        if (!val(x).same_shape(first))
            throw ShapeError("interleave_rows: shape mismatch " + val(x).shape_str() + " vs " +
                             first.shape_str());
        inputs.push_back(x.id);
    }
    const std::size_t b = xs.size();
    Tensor out(first.rows() * b, first.cols());
    for (std::size_t j = 0; j < b; ++j) {
        const Tensor& xv = val(xs[j]);
        for (std::size_t i = 0; i < xv.rows(); ++i)
            std::copy(xv.row_ptr(i), xv.row_ptr(i) + xv.cols(), out.row_ptr(i * b + j));
    }
    return push(std::move(out), std::move(inputs), "interleave_rows", [](Tape& t, int self) {
        const Tensor& g = t.grads_[self];
        const auto& in = t.nodes_[self].inputs;
        const std::size_t b = in.size();
        for (std::size_t j = 0; j < b; ++j) {
            if (!t.nodes_[in[j]].requires_grad) continue;
            Tensor& dx = t.grad_buf(in[j]);
            for (std::size_t i = 0; i < dx.rows(); ++i) {
                const double* src = g.row_ptr(i * b + j);
                double* dst = dx.row_ptr(i);
                for (std::size_t c = 0; c < dx.cols(); ++c) dst[c] += src[c];
            }
        }
    });
}

// ---- losses ----

Tape::Var Tape::bce_from_probs(Var p, Tensor labels) {
    const Tensor& pv = val(p);
    if (!pv.same_shape(labels))
        throw ShapeError("bce_from_probs: labels " + labels.shape_str() + " do not match " +
                         pv.shape_str());
    constexpr double kFloor = 1e-12;
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double y = labels[i];
        acc -= y * std::log(std::max(pv[i], kFloor)) +
               (1.0 - y) * std::log(std::max(1.0 - pv[i], kFloor));
    }
    const double n = static_cast<double>(pv.size());
    return push(Tensor::scalar(acc / n), {p.id}, "bce_from_probs",
                [labels = std::move(labels)](Tape& t, int self) {
                    const double g = t.grads_[self].item();
                    const auto& in = t.nodes_[self].inputs;
                    const Tensor& pv = t.nodes_[in[0]].value;
                    if (!t.nodes_[in[0]].requires_grad) return;
                    constexpr double kFloor = 1e-12;
                    const double n = static_cast<double>(pv.size());
                    Tensor& dp = t.grad_buf(in[0]);
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                        const double y = labels[i];
                        double d = 0.0;
                        if (pv[i] > kFloor) d -= y / pv[i];
                        if (1.0 - pv[i] > kFloor) d += (1.0 - y) / (1.0 - pv[i]);
                        dp[i] += g * d / n;
                    }
                });
}

}  // namespace dygex
