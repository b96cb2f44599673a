#include "cola/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cola {

namespace {
thread_local int g_no_grad_depth = 0;
}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

std::string Tensor::shape_str() const {
    if (!node_) return "[undefined]";
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor " + shape_str() + " is not a scalar");
    return node_->value[0];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw ContractError("grad(): no gradient populated on tensor " + shape_str());
    return node_->grad;
}

Tensor make_op(std::size_t rows, std::size_t cols, std::vector<Tensor> parents,
               std::function<void(Tensor::Node&)> backprop) {
    auto n = std::make_shared<Tensor::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.resize(rows * cols);
    bool rg = false;
    for (const auto& p : parents) rg = rg || (p.defined() && p.requires_grad());
    n->requires_grad = rg && grad_enabled();
    if (n->requires_grad) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    n->requires_grad = requires_grad && grad_enabled();
    return Tensor(std::move(n));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    if (values.size() != rows * cols)
        throw ShapeError("from(): " + std::to_string(values.size()) + " values for shape [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    n->requires_grad = requires_grad && grad_enabled();
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Tensor Tensor::randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = stddev * rng.normal();
    return from(rows, cols, std::move(v), requires_grad);
}

// ---- elementwise -------------------------------------------------------

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto out = make_op(a.rows(), a.cols(), {a, b}, [](Tensor::Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[std::size_t(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto out = make_op(a.rows(), a.cols(), {a, b}, [](Tensor::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto out = make_op(a.rows(), a.cols(), {a, b}, [](Tensor::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    auto out = make_op(a.rows(), a.cols(), {a}, [c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += c * n.grad[i];
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.values()[i];
    return out;
}

// ---- matrix ops ---------------------------------------------------------

namespace {
// c[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
// c[m x n] += a[m x k] * b^T where b is [n x k]
void gemm_bt_acc(const double* a, const double* bt, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bt + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}
// c[k x n] += a^T * b where a is [m x k], b is [m x n]
void gemm_at_acc(const double* at, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = at + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " + b.shape_str());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto out = make_op(m, n, {a, b}, [m, k, n](Tensor::Node& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            gemm_bt_acc(nd.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            gemm_at_acc(pa.value.data(), nd.grad.data(), pb.grad.data(), m, k, n);
        }
    });
    gemm_acc(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
    return out;
}

Tensor transpose(const Tensor& a) {
    const std::size_t r = a.rows(), c = a.cols();
    auto out = make_op(c, r, {a}, [r, c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += n.grad[j * r + i];
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a.values()[i * c + j];
    return out;
}

Tensor add_rowwise(const Tensor& m, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != m.cols())
        throw ShapeError("add_rowwise: row " + row.shape_str() + " does not match " + m.shape_str());
    const std::size_t r = m.rows(), c = m.cols();
    auto out = make_op(r, c, {m, row}, [r, c](Tensor::Node& n) {
        auto& pm = *n.parents[0];
        auto& pr = *n.parents[1];
        if (pm.requires_grad) {
            pm.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pm.grad[i] += n.grad[i];
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pr.grad[j] += n.grad[i * c + j];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = m.values()[i * c + j] + row.values()[j];
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1)
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for 2-D tensor " + x.shape_str());
    const std::size_t r = x.rows(), c = x.cols();
    // Iterate slices: axis 1 normalizes each row, axis 0 each column.
    const std::size_t n_slices = (axis == 1) ? r : c;
    const std::size_t slice_len = (axis == 1) ? c : r;
    const std::size_t stride = (axis == 1) ? 1 : c;
    const std::size_t slice_stride = (axis == 1) ? c : 1;

    auto out = make_op(r, c, {x}, [n_slices, slice_len, stride, slice_stride](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t s = 0; s < n_slices; ++s) {
            const std::size_t base = s * slice_stride;
            double dot = 0.0;
            for (std::size_t i = 0; i < slice_len; ++i)
                dot += n.grad[base + i * stride] * n.value[base + i * stride];
            for (std::size_t i = 0; i < slice_len; ++i) {
                const std::size_t idx = base + i * stride;
                p.grad[idx] += n.value[idx] * (n.grad[idx] - dot);
            }
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t s = 0; s < n_slices; ++s) {
        const std::size_t base = s * slice_stride;
        double mx = -HUGE_VAL;
        for (std::size_t i = 0; i < slice_len; ++i) mx = std::max(mx, x.values()[base + i * stride]);
        double sum = 0.0;
        for (std::size_t i = 0; i < slice_len; ++i) {
            const double e = std::exp(x.values()[base + i * stride] - mx);
            v[base + i * stride] = e;
            sum += e;
        }
        for (std::size_t i = 0; i < slice_len; ++i) v[base + i * stride] /= sum;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
        throw ShapeError("layer_norm: gain " + gain.shape_str() + " / bias " + bias.shape_str() +
                         " do not match last dimension of " + x.shape_str());
    const std::size_t r = x.rows(), c = x.cols();
    // Cache per-row inverse stddev and normalized values for the backward.
    auto inv_std = std::make_shared<std::vector<double>>(r);
    auto xhat = std::make_shared<std::vector<double>>(r * c);

    auto out = make_op(r, c, {x, gain, bias}, [r, c, inv_std, xhat](Tensor::Node& n) {
        auto& px = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        const auto& g = pg.value;
        if (pg.requires_grad) {
            pg.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pg.grad[j] += n.grad[i * c + j] * (*xhat)[i * c + j];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) pb.grad[j] += n.grad[i * c + j];
        }
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = n.grad[i * c + j] * g[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * (*xhat)[i * c + j];
                }
                mean_dxh /= double(c);
                mean_dxh_xh /= double(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = n.grad[i * c + j] * g[j];
                    px.grad[i * c + j] +=
                        (*inv_std)[i] * (dxh - mean_dxh - (*xhat)[i * c + j] * mean_dxh_xh);
                }
            }
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += x.values()[i * c + j];
        mean /= double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.values()[i * c + j] - mean;
            var += d * d;
        }
        var /= double(c);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (x.values()[i * c + j] - mean) * is;
            (*xhat)[i * c + j] = xh;
            v[i * c + j] = xh * gain.values()[j] + bias.values()[j];
        }
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    auto out = make_op(x.rows(), x.cols(), {x}, [inv_sqrt2, inv_sqrt2pi](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double xv = p.value[i];
            const double phi_cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
            const double phi_pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
            p.grad[i] += n.grad[i] * (phi_cdf + xv * phi_pdf);
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x.values()[i];
        v[i] = xv * 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    auto out = make_op(1, 1, {x}, [](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
    });
    double s = 0.0;
    for (double v : x.values()) s += v;
    out.mutable_values()[0] = s;
    return out;
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / double(x.size());
    auto out = make_op(1, 1, {x}, [inv](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0] * inv;
    });
    double s = 0.0;
    for (double v : x.values()) s += v;
    out.mutable_values()[0] = s * inv;
    return out;
}

Tensor mean_rows(const Tensor& x) {
    const std::size_t r = x.rows(), c = x.cols();
    // Division (not multiply-by-inverse) so the result matches plain
    // sum-then-divide pooling bit for bit.
    auto out = make_op(1, c, {x}, [r, c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += n.grad[j] / double(r);
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j] += x.values()[i * c + j];
    for (std::size_t j = 0; j < c; ++j) v[j] /= double(r);
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw ShapeError("concat_rows: column mismatch " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t ra = a.rows(), rb = b.rows(), c = a.cols();
    auto out = make_op(ra + rb, c, {a, b}, [ra, rb, c](Tensor::Node& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < ra * c; ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < rb * c; ++i) pb.grad[i] += n.grad[ra * c + i];
        }
    });
    auto& v = out.mutable_values();
    std::copy(a.values().begin(), a.values().end(), v.begin());
    std::copy(b.values().begin(), b.values().end(), v.begin() + std::ptrdiff_t(ra * c));
    return out;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
    if (start + count > x.rows())
        throw ShapeError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") out of range for " + x.shape_str());
    const std::size_t c = x.cols();
    auto out = make_op(count, c, {x}, [start, count, c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < count * c; ++i) p.grad[start * c + i] += n.grad[i];
    });
    auto& v = out.mutable_values();
    std::copy(x.values().begin() + std::ptrdiff_t(start * c),
              x.values().begin() + std::ptrdiff_t((start + count) * c), v.begin());
    return out;
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t c = x.cols();
    for (auto r : rows)
        if (r >= x.rows())
            throw ShapeError("select_rows: row " + std::to_string(r) + " out of range for " + x.shape_str());
    auto idx = std::make_shared<std::vector<std::size_t>>(rows);
    auto out = make_op(rows.size(), c, {x}, [idx, c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i)
            for (std::size_t j = 0; j < c; ++j) p.grad[(*idx)[i] * c + j] += n.grad[i * c + j];
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] = x.values()[rows[i] * c + j];
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
        total += p.cols();
    }
    std::vector<std::size_t> offsets;
    offsets.reserve(parts.size());
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        off += p.cols();
    }
    auto out = make_op(r, total, parts, [r, total, offsets](Tensor::Node& n) {
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const std::size_t pc = p.cols;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    p.grad[i * pc + j] += n.grad[i * total + offsets[k] + j];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t pc = parts[k].cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) v[i * total + offsets[k] + j] = parts[k].values()[i * pc + j];
    }
    return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    if (start + count > x.cols())
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + count) +
                         ") out of range for " + x.shape_str());
    const std::size_t r = x.rows(), c = x.cols();
    auto out = make_op(r, count, {x}, [start, count, r, c](Tensor::Node& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) p.grad[i * c + start + j] += n.grad[i * count + j];
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) v[i * count + j] = x.values()[i * c + start + j];
    return out;
}

Tensor cosine(const Tensor& u, const Tensor& v) {
    if (u.size() != v.size())
        throw ShapeError("cosine: length mismatch " + u.shape_str() + " vs " + v.shape_str());
    const std::size_t n = u.size();
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += u.values()[i] * v.values()[i];
        nu2 += u.values()[i] * u.values()[i];
        nv2 += v.values()[i] * v.values()[i];
    }
    const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
    const bool degenerate = nu < 1e-12 || nv < 1e-12;
    const double c = degenerate ? 0.0 : dot / (nu * nv);

    auto out = make_op(1, 1, {u, v}, [n, nu, nv, c, degenerate](Tensor::Node& nd) {
        if (degenerate) return;  // flat zero, no gradient
        auto& pu = *nd.parents[0];
        auto& pv = *nd.parents[1];
        const double g = nd.grad[0];
        if (pu.requires_grad) {
            pu.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pu.grad[i] += g * (pv.value[i] / (nu * nv) - c * pu.value[i] / (nu * nu));
        }
        if (pv.requires_grad) {
            pv.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pv.grad[i] += g * (pu.value[i] / (nu * nv) - c * pv.value[i] / (nv * nv));
        }
    });
    out.mutable_values()[0] = c;
    return out;
}

Tensor stack_scalars(const std::vector<Tensor>& entries, std::size_t rows, std::size_t cols) {
    if (entries.size() != rows * cols)
        throw ShapeError("stack_scalars: " + std::to_string(entries.size()) + " entries for [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
    for (const auto& e : entries)
        if (e.size() != 1) throw ShapeError("stack_scalars: entry " + e.shape_str() + " is not a scalar");
    auto out = make_op(rows, cols, entries, [](Tensor::Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            auto& p = *n.parents[i];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            p.grad[0] += n.grad[i];
        }
    });
    auto& v = out.mutable_values();
    for (std::size_t i = 0; i < entries.size(); ++i) v[i] = entries[i].values()[0];
    return out;
}

// ---- losses --------------------------------------------------------------

Tensor sigmoid_bce_with_logits(const Tensor& scores, const Tensor& labels, double s) {
    require_same_shape(scores, labels, "sigmoid_bce_with_logits");
    const std::size_t n = scores.size();
    const double inv_n = 1.0 / double(n);
    auto out = make_op(1, 1, {scores, labels}, [n, s, inv_n](Tensor::Node& nd) {
        auto& px = *nd.parents[0];
        auto& py = *nd.parents[1];
        if (!px.requires_grad) return;
        px.ensure_grad();
        const double g = nd.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
            const double z = s * px.value[i];
            const double sig = 1.0 / (1.0 + std::exp(-z));
            px.grad[i] += g * s * (sig - py.value[i]) * inv_n;
        }
    });
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = s * scores.values()[i];
        const double y = labels.values()[i];
        // softplus(z) - z*y, stable for large |z|.
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    out.mutable_values()[0] = total * inv_n;
    return out;
}

Tensor nce_loss(const Tensor& scores, const Tensor& labels, double s) {
    require_same_shape(scores, labels, "nce_loss");
    const std::size_t r = scores.rows(), c = scores.cols();
    for (std::size_t i = 0; i < r; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < c; ++j) any = any || labels.at(i, j) > 0.5;
        if (!any) throw ContractError("nce_loss: row " + std::to_string(i) + " has no positive label");
    }
    for (std::size_t j = 0; j < c; ++j) {
        bool any = false;
        for (std::size_t i = 0; i < r; ++i) any = any || labels.at(i, j) > 0.5;
        if (!any) throw ContractError("nce_loss: column " + std::to_string(j) + " has no positive label");
    }

    // Row/column softmaxes and positive-restricted softmaxes, cached for the
    // backward pass.
    auto p_row = std::make_shared<std::vector<double>>(r * c);   // softmax per row
    auto q_row = std::make_shared<std::vector<double>>(r * c);   // positives-only softmax per row
    auto p_col = std::make_shared<std::vector<double>>(r * c);
    auto q_col = std::make_shared<std::vector<double>>(r * c);

    double loss = 0.0;
    {
        std::vector<double> z(r * c);
        for (std::size_t i = 0; i < r * c; ++i) z[i] = s * scores.values()[i];
        for (std::size_t i = 0; i < r; ++i) {
            double mx = -HUGE_VAL;
            for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z[i * c + j]);
            double sum = 0.0, pos_sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = std::exp(z[i * c + j] - mx);
                (*p_row)[i * c + j] = e;
                sum += e;
                if (labels.at(i, j) > 0.5) pos_sum += e;
            }
            for (std::size_t j = 0; j < c; ++j) {
                (*q_row)[i * c + j] = labels.at(i, j) > 0.5 ? (*p_row)[i * c + j] / pos_sum : 0.0;
                (*p_row)[i * c + j] /= sum;
            }
            loss += 0.5 / double(r) * (std::log(sum) - std::log(pos_sum));
        }
        for (std::size_t j = 0; j < c; ++j) {
            double mx = -HUGE_VAL;
            for (std::size_t i = 0; i < r; ++i) mx = std::max(mx, z[i * c + j]);
            double sum = 0.0, pos_sum = 0.0;
            for (std::size_t i = 0; i < r; ++i) {
                const double e = std::exp(z[i * c + j] - mx);
                (*p_col)[i * c + j] = e;
                sum += e;
                if (labels.at(i, j) > 0.5) pos_sum += e;
            }
            for (std::size_t i = 0; i < r; ++i) {
                (*q_col)[i * c + j] = labels.at(i, j) > 0.5 ? (*p_col)[i * c + j] / pos_sum : 0.0;
                (*p_col)[i * c + j] /= sum;
            }
            loss += 0.5 / double(c) * (std::log(sum) - std::log(pos_sum));
        }
    }

    auto out = make_op(1, 1, {scores, labels}, [r, c, s, p_row, q_row, p_col, q_col](Tensor::Node& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        const double g = nd.grad[0];
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const std::size_t idx = i * c + j;
                const double d = 0.5 / double(r) * ((*p_row)[idx] - (*q_row)[idx]) +
                                 0.5 / double(c) * ((*p_col)[idx] - (*q_col)[idx]);
                px.grad[idx] += g * s * d;
            }
        }
    });
    out.mutable_values()[0] = loss;
    return out;
}

// ---- backward --------------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar, got " +
                            (loss.defined() ? loss.shape_str() : std::string("[undefined]")));
    if (!loss.requires_grad()) return;  // nothing reachable requires grad

    // Iterative post-order DFS; reverse gives a valid topological order.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    struct Frame {
        Tensor::Node* node;
        std::size_t next_child;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& f = stack.back();
        if (f.next_child < f.node->parents.size()) {
            Tensor::Node* child = f.node->parents[f.next_child++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    auto* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

}  // namespace cola
