// SPDX-License-Identifier: Apache-2.0
#include "fped/tape.hpp"

#include <cmath>
#include <cstring>

namespace fped {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

int Tape::push(Node n) {
    n.value.require_finite("tape op");
    nodes_.push_back(std::move(n));
    grads_valid_ = false;
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(v);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    check_same_shape(va, vb, "add");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    Node n;
    n.op = Op::add;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    check_same_shape(va, vb, "sub");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    Node n;
    n.op = Op::sub;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    check_same_shape(va, vb, "mul");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    Node n;
    n.op = Op::mul;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::divide(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    check_same_shape(va, vb, "divide");
    Tensor out = va;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
    Node n;
    n.op = Op::divide;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    Node n;
    n.op = Op::scale;
    n.value = std::move(out);
    n.parents = {a};
    n.c0 = c;
    return push(std::move(n));
}

int Tape::add_const(int a, double c) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c;
    Node n;
    n.op = Op::add_const;
    n.value = std::move(out);
    n.parents = {a};
    n.c0 = c;
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw ShapeError("matmul: incompatible " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
    Tensor out({m, p});
    for (int i = 0; i < m; ++i) {
        double* orow = out.data() + static_cast<std::int64_t>(i) * p;
        const double* arow = A.data() + static_cast<std::int64_t>(i) * k;
        for (int t = 0; t < k; ++t) {
            const double av = arow[t];
            if (av == 0.0) continue;
            const double* brow = B.data() + static_cast<std::int64_t>(t) * p;
            for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
    }
    Node n;
    n.op = Op::matmul;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1))
        throw ShapeError("matmul_nt: incompatible " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
    const int m = A.dim(0), k = A.dim(1), p = B.dim(0);
    Tensor out({m, p});
    for (int i = 0; i < m; ++i) {
        const double* arow = A.data() + static_cast<std::int64_t>(i) * k;
        double* orow = out.data() + static_cast<std::int64_t>(i) * p;
        for (int j = 0; j < p; ++j) {
            const double* brow = B.data() + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
            orow[j] = acc;
        }
    }
    Node n;
    n.op = Op::matmul_nt;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

int Tape::matvec(int a, int x) {
    const Tensor& A = value(a);
    const Tensor& v = value(x);
    if (A.rank() != 2 || v.rank() != 1 || A.dim(1) != v.dim(0))
        throw ShapeError("matvec: incompatible " + shape_str(A.shape()) + " x " + shape_str(v.shape()));
    const int m = A.dim(0), k = A.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        const double* arow = A.data() + static_cast<std::int64_t>(i) * k;
        double acc = 0.0;
        for (int t = 0; t < k; ++t) acc += arow[t] * v[t];
        out[i] = acc;
    }
    Node n;
    n.op = Op::matvec;
    n.value = std::move(out);
    n.parents = {a, x};
    return push(std::move(n));
}

int Tape::linear_cols(int w, int q, std::vector<int> cols) {
    const Tensor& W = value(w);
    const Tensor& Q = value(q);
    if (W.rank() != 2 || Q.rank() != 1 || static_cast<int>(cols.size()) != Q.dim(0))
        throw ShapeError("linear_cols: need W rank-2 and q matching the column list");
    const int m = W.dim(0), kn = W.dim(1);
    Tensor out({m});
    for (std::size_t j = 0; j < cols.size(); ++j) {
        const int c = cols[j];
        if (c < 0 || c >= kn) throw ArgumentError("linear_cols: column index out of range");
        const double qv = Q[static_cast<std::int64_t>(j)];
        if (qv == 0.0) continue;
        const double* wp = W.data() + c;
        for (int i = 0; i < m; ++i) out[i] += wp[static_cast<std::int64_t>(i) * kn] * qv;
    }
    Node n;
    n.op = Op::linear_cols;
    n.value = std::move(out);
    n.parents = {w, q};
    n.idx = std::move(cols);
    return push(std::move(n));
}

int Tape::outer(int u, int v) {
    const Tensor& a = value(u);
    const Tensor& b = value(v);
    if (a.rank() != 1 || b.rank() != 1) throw ShapeError("outer expects two vectors");
    const int m = a.dim(0), p = b.dim(0);
    Tensor out({m, p});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) out.at(i, j) = a[i] * b[j];
    Node n;
    n.op = Op::outer;
    n.value = std::move(out);
    n.parents = {u, v};
    return push(std::move(n));
}

int Tape::dot(int u, int v) {
    const Tensor& a = value(u);
    const Tensor& b = value(v);
    check_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    Node n;
    n.op = Op::dot;
    n.value = Tensor::scalar(acc);
    n.parents = {u, v};
    return push(std::move(n));
}

int Tape::sum(int a) {
    const Tensor& v = value(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) acc += v[i];
    Node n;
    n.op = Op::sum;
    n.value = Tensor::scalar(acc);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::mean(int a) {
    const Tensor& v = value(a);
    double acc = 0.0;
    for (std::int64_t i = 0; i < v.size(); ++i) acc += v[i];
    Node n;
    n.op = Op::mean;
    n.value = Tensor::scalar(acc / static_cast<double>(v.size()));
    n.parents = {a};
    return push(std::move(n));
}

int Tape::row_softmax(int a) {
    const Tensor& v = value(a);
    if (v.rank() != 1 && v.rank() != 2) throw ShapeError("row_softmax expects rank-1 or rank-2");
    Tensor out = v;
    const int cols = v.rank() == 2 ? v.dim(1) : v.dim(0);
    const int rows = v.rank() == 2 ? v.dim(0) : 1;
    for (int r = 0; r < rows; ++r) softmax_span(out.data() + static_cast<std::int64_t>(r) * cols, cols);
    Node n;
    n.op = Op::row_softmax;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::log(int a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    Node n;
    n.op = Op::log;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::exp(int a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    Node n;
    n.op = Op::exp;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::sqrt(int a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
    Node n;
    n.op = Op::sqrt;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::gelu(int a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] * norm_cdf(out[i]);
    Node n;
    n.op = Op::gelu;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::tanh(int a) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Node n;
    n.op = Op::tanh;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::clamp_min(int a, double c) {
    Tensor out = value(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] < c ? c : out[i];
    Node n;
    n.op = Op::clamp_min;
    n.value = std::move(out);
    n.parents = {a};
    n.c0 = c;
    return push(std::move(n));
}

int Tape::gather(int a, std::vector<int> flat_idx) {
    const Tensor& v = value(a);
    Tensor out({static_cast<int>(flat_idx.size())});
    for (std::size_t j = 0; j < flat_idx.size(); ++j) {
        const int i = flat_idx[j];
        if (i < 0 || i >= v.size()) throw ArgumentError("gather: index out of range");
        out[static_cast<std::int64_t>(j)] = v[i];
    }
    Node n;
    n.op = Op::gather;
    n.value = std::move(out);
    n.parents = {a};
    n.idx = std::move(flat_idx);
    return push(std::move(n));
}

int Tape::concat(const std::vector<int>& parts) {
    if (parts.empty()) throw ArgumentError("concat: no parts");
    int total = 0;
    for (int p : parts) {
        if (value(p).rank() != 1) throw ShapeError("concat expects rank-1 parts");
        total += value(p).dim(0);
    }
    Tensor out({total});
    int off = 0;
    for (int p : parts) {
        const Tensor& v = value(p);
        std::memcpy(out.data() + off, v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
        off += v.dim(0);
    }
    Node n;
    n.op = Op::concat;
    n.value = std::move(out);
    n.parents = parts;
    return push(std::move(n));
}

int Tape::stack_rows(const std::vector<int>& rows) {
    if (rows.empty()) throw ArgumentError("stack_rows: no rows");
    const int cols = value(rows[0]).dim(0);
    for (int r : rows)
        if (value(r).rank() != 1 || value(r).dim(0) != cols)
            throw ShapeError("stack_rows expects equal-length vectors");
    Tensor out({static_cast<int>(rows.size()), cols});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out.data() + i * static_cast<std::size_t>(cols), value(rows[i]).data(),
                    static_cast<std::size_t>(cols) * sizeof(double));
    Node n;
    n.op = Op::stack_rows;
    n.value = std::move(out);
    n.parents = rows;
    return push(std::move(n));
}

int Tape::mean_axis0(int a) {
    const Tensor& v = value(a);
    if (v.rank() != 2) throw ShapeError("mean_axis0 expects rank-2");
    const int m = v.dim(0), p = v.dim(1);
    Tensor out({p});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) out[j] += v.at(i, j);
    for (int j = 0; j < p; ++j) out[j] /= m;
    Node n;
    n.op = Op::mean_axis0;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::add_rows(int m, int vvec) {
    const Tensor& M = value(m);
    const Tensor& v = value(vvec);
    if (M.rank() != 2 || v.rank() != 1 || M.dim(1) != v.dim(0))
        throw ShapeError("add_rows: incompatible " + shape_str(M.shape()) + " + " + shape_str(v.shape()));
    Tensor out = M;
    const int rows = M.dim(0), cols = M.dim(1);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(i, j) += v[j];
    Node n;
    n.op = Op::add_rows;
    n.value = std::move(out);
    n.parents = {m, vvec};
    return push(std::move(n));
}

int Tape::mask_mul(int a, Tensor mask) {
    const Tensor& v = value(a);
    check_same_shape(v, mask, "mask_mul");
    Tensor out = v;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    Node n;
    n.op = Op::mask_mul;
    n.value = std::move(out);
    n.parents = {a};
    n.aux = std::move(mask);
    return push(std::move(n));
}

int Tape::scalar_mul(int s, int a) {
    const Tensor& sv = value(s);
    if (sv.size() != 1) throw ShapeError("scalar_mul: scalar operand must have one element");
    Tensor out = value(a);
    const double c = sv[0];
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= c;
    Node n;
    n.op = Op::scalar_mul;
    n.value = std::move(out);
    n.parents = {s, a};
    return push(std::move(n));
}

int Tape::reshape(int a, std::vector<int> shape) {
    Tensor out(std::move(shape), value(a).values());
    Node n;
    n.op = Op::reshape;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::row_normalize(int a) {
    const Tensor& v = value(a);
    if (v.rank() != 2) throw ShapeError("row_normalize expects rank-2");
    const int rows = v.dim(0), cols = v.dim(1);
    Tensor out = v;
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += v.at(i, j) * v.at(i, j);
        const double norm = std::sqrt(s);
        if (norm == 0.0) throw NumericError("row_normalize: zero-norm row");
        for (int j = 0; j < cols; ++j) out.at(i, j) /= norm;
    }
    Node n;
    n.op = Op::row_normalize;
    n.value = std::move(out);
    n.parents = {a};
    return push(std::move(n));
}

int Tape::rowwise_dot(int a, int b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_same_shape(A, B, "rowwise_dot");
    if (A.rank() != 2) throw ShapeError("rowwise_dot expects rank-2");
    const int rows = A.dim(0), cols = A.dim(1);
    Tensor out({rows});
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += A.at(i, j) * B.at(i, j);
        out[i] = acc;
    }
    Node n;
    n.op = Op::rowwise_dot;
    n.value = std::move(out);
    n.parents = {a, b};
    return push(std::move(n));
}

const Tensor& Tape::grad(int id) const {
    if (!grads_valid_) throw ArgumentError("grad() before backward()");
    return grads_[static_cast<std::size_t>(id)];
}

void Tape::backward(int root) {
    const Node& r = node(root);
    if (r.value.size() != 1) throw ShapeError("backward root must be a scalar");
    grads_.clear();
    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor::zeros(nodes_[i].value.shape());
    grads_[static_cast<std::size_t>(root)][0] = 1.0;

    for (int id = root; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& g = grads_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add: {
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::sub: {
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::mul: {
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * vb[i];
                    gb[i] += g[i] * va[i];
                }
                break;
            }
            case Op::divide: {
                const Tensor& va = value(n.parents[0]);
                const Tensor& vb = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] / vb[i];
                    gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                }
                break;
            }
            case Op::scale: {
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.c0;
                break;
            }
            case Op::add_const: {
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::matmul: {
                const Tensor& A = value(n.parents[0]);
                const Tensor& B = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < p; ++j) acc += g.at(i, j) * B.at(t, j);
                        ga.at(i, t) += acc;
                    }
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < p; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += A.at(i, t) * g.at(i, j);
                        gb.at(t, j) += acc;
                    }
                break;
            }
            case Op::matmul_nt: {
                const Tensor& A = value(n.parents[0]);
                const Tensor& B = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                const int m = A.dim(0), k = A.dim(1), p = B.dim(0);
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < p; ++j) acc += g.at(i, j) * B.at(j, t);
                        ga.at(i, t) += acc;
                    }
                for (int j = 0; j < p; ++j)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += g.at(i, j) * A.at(i, t);
                        gb.at(j, t) += acc;
                    }
                break;
            }
            case Op::matvec: {
                const Tensor& A = value(n.parents[0]);
                const Tensor& x = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gx = grads_[n.parents[1]];
                const int m = A.dim(0), k = A.dim(1);
                for (int i = 0; i < m; ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    double* garow = ga.data() + static_cast<std::int64_t>(i) * k;
                    const double* arow = A.data() + static_cast<std::int64_t>(i) * k;
                    for (int t = 0; t < k; ++t) {
                        garow[t] += gi * x[t];
                        gx[t] += gi * arow[t];
                    }
                }
                break;
            }
            case Op::linear_cols: {
                const Tensor& W = value(n.parents[0]);
                const Tensor& q = value(n.parents[1]);
                Tensor& gw = grads_[n.parents[0]];
                Tensor& gq = grads_[n.parents[1]];
                const int m = W.dim(0), kn = W.dim(1);
                for (std::size_t j = 0; j < n.idx.size(); ++j) {
                    const int c = n.idx[j];
                    const double qv = q[static_cast<std::int64_t>(j)];
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) {
                        const std::int64_t off = static_cast<std::int64_t>(i) * kn + c;
                        gw[off] += g[i] * qv;
                        acc += W[off] * g[i];
                    }
                    gq[static_cast<std::int64_t>(j)] += acc;
                }
                break;
            }
            case Op::outer: {
                const Tensor& u = value(n.parents[0]);
                const Tensor& v = value(n.parents[1]);
                Tensor& gu = grads_[n.parents[0]];
                Tensor& gv = grads_[n.parents[1]];
                const int m = u.dim(0), p = v.dim(0);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < p; ++j) {
                        gu[i] += g.at(i, j) * v[j];
                        gv[j] += g.at(i, j) * u[i];
                    }
                break;
            }
            case Op::dot: {
                const Tensor& u = value(n.parents[0]);
                const Tensor& v = value(n.parents[1]);
                Tensor& gu = grads_[n.parents[0]];
                Tensor& gv = grads_[n.parents[1]];
                const double gs = g[0];
                for (std::int64_t i = 0; i < u.size(); ++i) {
                    gu[i] += gs * v[i];
                    gv[i] += gs * u[i];
                }
                break;
            }
            case Op::sum: {
                Tensor& ga = grads_[n.parents[0]];
                const double gs = g[0];
                for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += gs;
                break;
            }
            case Op::mean: {
                Tensor& ga = grads_[n.parents[0]];
                const double gs = g[0] / static_cast<double>(ga.size());
                for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += gs;
                break;
            }
            case Op::row_softmax: {
                const Tensor& y = n.value;
                Tensor& ga = grads_[n.parents[0]];
                const int cols = y.rank() == 2 ? y.dim(1) : y.dim(0);
                const int rows = y.rank() == 2 ? y.dim(0) : 1;
                for (int r2 = 0; r2 < rows; ++r2) {
                    const std::int64_t off = static_cast<std::int64_t>(r2) * cols;
                    double dotgy = 0.0;
                    for (int j = 0; j < cols; ++j) dotgy += g[off + j] * y[off + j];
                    for (int j = 0; j < cols; ++j) ga[off + j] += y[off + j] * (g[off + j] - dotgy);
                }
                break;
            }
            case Op::log: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                break;
            }
            case Op::exp: {
                const Tensor& y = n.value;
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                break;
            }
            case Op::sqrt: {
                const Tensor& y = n.value;
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
                break;
            }
            case Op::gelu: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * (norm_cdf(x[i]) + x[i] * norm_pdf(x[i]));
                break;
            }
            case Op::tanh: {
                const Tensor& y = n.value;
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::clamp_min: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i)
                    if (x[i] >= n.c0) ga[i] += g[i];
                break;
            }
            case Op::gather: {
                Tensor& ga = grads_[n.parents[0]];
                for (std::size_t j = 0; j < n.idx.size(); ++j)
                    ga[n.idx[j]] += g[static_cast<std::int64_t>(j)];
                break;
            }
            case Op::concat: {
                std::int64_t off = 0;
                for (int p : n.parents) {
                    Tensor& gp = grads_[p];
                    for (std::int64_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                    off += gp.size();
                }
                break;
            }
            case Op::stack_rows: {
                const int cols = n.value.dim(1);
                for (std::size_t r2 = 0; r2 < n.parents.size(); ++r2) {
                    Tensor& gp = grads_[n.parents[r2]];
                    const std::int64_t off = static_cast<std::int64_t>(r2) * cols;
                    for (int j = 0; j < cols; ++j) gp[j] += g[off + j];
                }
                break;
            }
            case Op::mean_axis0: {
                const Tensor& x = value(n.parents[0]);
                Tensor& ga = grads_[n.parents[0]];
                const int m = x.dim(0), p = x.dim(1);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < p; ++j) ga.at(i, j) += g[j] / m;
                break;
            }
            case Op::add_rows: {
                Tensor& gm = grads_[n.parents[0]];
                Tensor& gv = grads_[n.parents[1]];
                const int rows = gm.dim(0), cols = gm.dim(1);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j) {
                        gm.at(i, j) += g.at(i, j);
                        gv[j] += g.at(i, j);
                    }
                break;
            }
            case Op::mask_mul: {
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.aux[i];
                break;
            }
            case Op::scalar_mul: {
                const double s = value(n.parents[0])[0];
                const Tensor& a = value(n.parents[1]);
                Tensor& gs = grads_[n.parents[0]];
                Tensor& ga = grads_[n.parents[1]];
                double acc = 0.0;
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    acc += g[i] * a[i];
                    ga[i] += g[i] * s;
                }
                gs[0] += acc;
                break;
            }
            case Op::reshape: {
                Tensor& ga = grads_[n.parents[0]];
                for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::row_normalize: {
                const Tensor& x = value(n.parents[0]);
                const Tensor& y = n.value;
                Tensor& ga = grads_[n.parents[0]];
                const int rows = x.dim(0), cols = x.dim(1);
                for (int i = 0; i < rows; ++i) {
                    double norm = 0.0, gy = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        norm += x.at(i, j) * x.at(i, j);
                        gy += g.at(i, j) * y.at(i, j);
                    }
                    norm = std::sqrt(norm);
                    for (int j = 0; j < cols; ++j)
                        ga.at(i, j) += (g.at(i, j) - y.at(i, j) * gy) / norm;
                }
                break;
            }
            case Op::rowwise_dot: {
                const Tensor& A = value(n.parents[0]);
                const Tensor& B = value(n.parents[1]);
                Tensor& ga = grads_[n.parents[0]];
                Tensor& gb = grads_[n.parents[1]];
                const int rows = A.dim(0), cols = A.dim(1);
                for (int i = 0; i < rows; ++i) {
                    const double gi = g[i];
                    for (int j = 0; j < cols; ++j) {
                        ga.at(i, j) += gi * B.at(i, j);
                        gb.at(i, j) += gi * A.at(i, j);
                    }
                }
                break;
            }
        }
    }
    grads_valid_ = true;
}

double grad_check(const ScalarFn& f, const Tensor& theta, double h) {
    if (h < 1e-6 || h > 1e-4) throw ArgumentError("grad_check: h must lie in [1e-6, 1e-4]");
    Tape tape;
    const int leaf = tape.leaf(theta);
    const int root = f(tape, leaf);
    tape.value(root).require_finite("grad_check");
    tape.backward(root);
    const Tensor analytic = tape.grad(leaf);

    double max_rel = 0.0;
    for (std::int64_t i = 0; i < theta.size(); ++i) {
        Tensor plus = theta, minus = theta;
        plus[i] += h;
        minus[i] -= h;
        Tape tp, tm;
        const double fp = tp.value(f(tp, tp.leaf(plus))).item();
        const double fm = tm.value(f(tm, tm.leaf(minus))).item();
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8);
        if (rel > max_rel) max_rel = rel;
    }
    return max_rel;
}

}  // namespace fped
