#include "kasper/autodiff.hpp"

#include <cmath>

#include "kasper/errors.hpp"

namespace kasper::ad {

const Mat& Var::value() const { return tape->value(id); }

Var Tape::make(const char* op, Mat value, Backprop backprop) {
    if (!value.allFinite()) {
        throw numeric_fault(std::string("non-finite forward value at node '") + op + "' (#" +
                            std::to_string(nodes_.size()) + ")");
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Parameter& p) {
    Var v = make("param", p.value, nullptr);
    nodes_.back().bound = &p;
    return v;
}

Var Tape::constant(Mat v, const char* label) { return make(label, std::move(v), nullptr); }

void Tape::add_grad(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(const Var& root) {
    if (root.tape != this) throw contract_error("backward: root from another tape");
    const Mat& rv = value(root.id);
    if (rv.rows() != 1 || rv.cols() != 1) throw shape_error("backward root must be scalar");
    // node grads are per-pass scratch; only Parameter::grad accumulates
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    add_grad(root.id, Mat::Ones(1, 1));
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.has_grad) continue;
        if (n.backprop) n.backprop(*this, n.grad);
        if (n.bound) n.bound->grad += n.grad;
    }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw shape_error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
    }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tape* t = a.tape;
    int ia = a.id, ib = b.id;
    return t->make("add", a.value() + b.value(), [ia, ib](Tape& tp, const Mat& g) {
        tp.add_grad(ia, g);
        tp.add_grad(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tape* t = a.tape;
    int ia = a.id, ib = b.id;
    return t->make("sub", a.value() - b.value(), [ia, ib](Tape& tp, const Mat& g) {
        tp.add_grad(ia, g);
        tp.add_grad(ib, Mat(-g));
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tape* t = a.tape;
    int ia = a.id, ib = b.id;
    return t->make("mul", a.value().cwiseProduct(b.value()), [ia, ib](Tape& tp, const Mat& g) {
        tp.add_grad(ia, g.cwiseProduct(tp.value(ib)));
        tp.add_grad(ib, g.cwiseProduct(tp.value(ia)));
    });
}

Var scale(const Var& a, double c) {
    int ia = a.id;
    return a.tape->make("scale", a.value() * c,
                        [ia, c](Tape& tp, const Mat& g) { tp.add_grad(ia, Mat(g * c)); });
}

Var add_constant(const Var& a, const Mat& c) {
    if (a.rows() != c.rows() || a.cols() != c.cols()) throw shape_error("add_constant: shape mismatch");
    int ia = a.id;
    return a.tape->make("add_constant", a.value() + c,
                        [ia](Tape& tp, const Mat& g) { tp.add_grad(ia, g); });
}

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) throw shape_error("matmul: inner dimensions differ");
    Tape* t = a.tape;
    int ia = a.id, ib = b.id;
    return t->make("matmul", a.value() * b.value(), [ia, ib](Tape& tp, const Mat& g) {
        tp.add_grad(ia, g * tp.value(ib).transpose());
        tp.add_grad(ib, tp.value(ia).transpose() * g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw shape_error("matmul_nt: column counts differ");
    Tape* t = a.tape;
    int ia = a.id, ib = b.id;
    return t->make("matmul_nt", a.value() * b.value().transpose(),
                   [ia, ib](Tape& tp, const Mat& g) {
                       tp.add_grad(ia, g * tp.value(ib));
                       tp.add_grad(ib, g.transpose() * tp.value(ia));
                   });
}

Var affine(const Var& x, const Var& w, const Var& b) {
    if (x.cols() != w.rows()) throw shape_error("affine: x.cols != w.rows");
    if (b.rows() != 1 || b.cols() != w.cols()) throw shape_error("affine: bias must be 1 x out");
    Tape* t = x.tape;
    int ix = x.id, iw = w.id, ib = b.id;
    Mat val = x.value() * w.value();
    val.rowwise() += b.value().row(0);
    return t->make("affine", std::move(val), [ix, iw, ib](Tape& tp, const Mat& g) {
        tp.add_grad(ix, g * tp.value(iw).transpose());
        tp.add_grad(iw, tp.value(ix).transpose() * g);
        tp.add_grad(ib, g.colwise().sum());
    });
}

Var tanh(const Var& a) {
    Mat y = a.value().array().tanh();
    int ia = a.id;
    return a.tape->make("tanh", y, [ia, y](Tape& tp, const Mat& g) {
        tp.add_grad(ia, (g.array() * (1.0 - y.array().square())).matrix());
    });
}

Var sigmoid(const Var& a) {
    Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
    int ia = a.id;
    return a.tape->make("sigmoid", y, [ia, y](Tape& tp, const Mat& g) {
        tp.add_grad(ia, (g.array() * y.array() * (1.0 - y.array())).matrix());
    });
}

Var relu(const Var& a) {
    int ia = a.id;
    return a.tape->make("relu", a.value().cwiseMax(0.0), [ia](Tape& tp, const Mat& g) {
        tp.add_grad(ia, (g.array() * (tp.value(ia).array() > 0.0).cast<double>()).matrix());
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& a) {
    const double kC = kGeluC;
    const double kA = kGeluA;
    const auto& x = a.value().array();
    Mat inner = (kC * (x + kA * x.cube())).matrix();
    Mat th = inner.array().tanh().matrix();
    Mat y = (0.5 * x * (1.0 + th.array())).matrix();
    int ia = a.id;
    return a.tape->make("gelu", y, [ia, th](Tape& tp, const Mat& g) {
        const auto& x = tp.value(ia).array();
        auto sech2 = 1.0 - th.array().square();
        auto dinner = kGeluC * (1.0 + 3.0 * kGeluA * x.square());
        Mat dx = (0.5 * (1.0 + th.array()) + 0.5 * x * sech2 * dinner).matrix();
        tp.add_grad(ia, g.cwiseProduct(dx));
    });
}

Var cube(const Var& a) {
    int ia = a.id;
    return a.tape->make("cube", a.value().array().cube().matrix(), [ia](Tape& tp, const Mat& g) {
        tp.add_grad(ia, (g.array() * 3.0 * tp.value(ia).array().square()).matrix());
    });
}

Var sum(const Var& a) {
    int ia = a.id;
    Mat v(1, 1);
    v(0, 0) = a.value().sum();
    return a.tape->make("sum", v, [ia](Tape& tp, const Mat& g) {
        const Mat& av = tp.value(ia);
        tp.add_grad(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
    });
}

Var mean(const Var& a) {
    int ia = a.id;
    const double n = static_cast<double>(a.rows() * a.cols());
    Mat v(1, 1);
    v(0, 0) = a.value().mean();
    return a.tape->make("mean", v, [ia, n](Tape& tp, const Mat& g) {
        const Mat& av = tp.value(ia);
        tp.add_grad(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0) / n));
    });
}

Var colmean(const Var& a) {
    int ia = a.id;
    const double b = static_cast<double>(a.rows());
    return a.tape->make("colmean", a.value().colwise().mean(), [ia, b](Tape& tp, const Mat& g) {
        const Mat& av = tp.value(ia);
        Mat da(av.rows(), av.cols());
        da = (g / b).replicate(av.rows(), 1);
        tp.add_grad(ia, da);
    });
}

Var sqnorm(const Var& a) {
    int ia = a.id;
    Mat v(1, 1);
    v(0, 0) = a.value().squaredNorm();
    return a.tape->make("sqnorm", v, [ia](Tape& tp, const Mat& g) {
        tp.add_grad(ia, Mat(2.0 * g(0, 0) * tp.value(ia)));
    });
}

Var abs_sum(const Var& a) {
    int ia = a.id;
    Mat v(1, 1);
    v(0, 0) = a.value().array().abs().sum();
    return a.tape->make("abs_sum", v, [ia](Tape& tp, const Mat& g) {
        tp.add_grad(ia, (g(0, 0) * tp.value(ia).array().sign()).matrix());
    });
}

Var softmax_rows(const Var& logits, double tau) {
    if (tau <= 0.0) throw parameter_error("softmax temperature must be positive");
    Mat z = logits.value() / tau;
    Mat s(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        Eigen::ArrayXd row = z.row(r).array();
        row -= row.maxCoeff();
        Eigen::ArrayXd e = row.exp();
        s.row(r) = (e / e.sum()).matrix();
    }
    int il = logits.id;
    return logits.tape->make("softmax", s, [il, s, tau](Tape& tp, const Mat& g) {
        Mat dl(s.rows(), s.cols());
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double dot = g.row(r).cwiseProduct(s.row(r)).sum();
            dl.row(r) = (s.row(r).array() * (g.row(r).array() - dot) / tau).matrix();
        }
        tp.add_grad(il, dl);
    });
}

Var soft_threshold(const Var& w, double theta) {
    if (theta < 0.0) throw parameter_error("soft threshold must be non-negative");
    const auto& x = w.value().array();
    Mat y = (x.sign() * (x.abs() - theta).max(0.0)).matrix();
    int iw = w.id;
    return w.tape->make("soft_threshold", y, [iw, theta](Tape& tp, const Mat& g) {
        auto mask = (tp.value(iw).array().abs() > theta).cast<double>();
        tp.add_grad(iw, (g.array() * mask).matrix());
    });
}

Var huber_mean(const Var& pred, const Var& target, double delta) {
    require_same_shape(pred, target, "huber_mean");
    if (delta <= 0.0) throw parameter_error("huber delta must be positive");
    Eigen::ArrayXXd e = pred.value().array() - target.value().array();
    Eigen::ArrayXXd ae = e.abs();
    Eigen::ArrayXXd loss =
        (ae <= delta).select(0.5 * e.square(), delta * (ae - 0.5 * delta));
    const double n = static_cast<double>(e.size());
    Mat v(1, 1);
    v(0, 0) = loss.sum() / n;
    int ip = pred.id, it = target.id;
    return pred.tape->make("huber", v, [ip, it, delta, n](Tape& tp, const Mat& g) {
        Eigen::ArrayXXd e = tp.value(ip).array() - tp.value(it).array();
        Mat d = (e.min(delta).max(-delta) * (g(0, 0) / n)).matrix();
        tp.add_grad(ip, d);
        tp.add_grad(it, Mat(-d));
    });
}

Var balance_kl(const Var& probs) {
    const double b = static_cast<double>(probs.rows());
    const double k = static_cast<double>(probs.cols());
    Eigen::ArrayXd pbar = probs.value().colwise().mean().transpose().array();
    double kl = 0.0;
    for (Eigen::Index i = 0; i < pbar.size(); ++i) {
        if (pbar(i) > 0.0) kl += pbar(i) * std::log(k * pbar(i));
    }
    Mat v(1, 1);
    v(0, 0) = kl;
    int ip = probs.id;
    return probs.tape->make("balance_kl", v, [ip, b, k](Tape& tp, const Mat& g) {
        Eigen::ArrayXd pbar = tp.value(ip).colwise().mean().transpose().array();
        Eigen::RowVectorXd drow(pbar.size());
        for (Eigen::Index i = 0; i < pbar.size(); ++i) {
            drow(i) = pbar(i) > 0.0 ? (std::log(k * pbar(i)) + 1.0) * g(0, 0) / b : 0.0;
        }
        tp.add_grad(ip, drow.replicate(static_cast<Eigen::Index>(b), 1));
    });
}

Var contrastive(const Var& embeddings, const std::vector<Pair>& pairs, double margin) {
    Tape* t = embeddings.tape;
    if (pairs.empty()) return t->constant(Mat::Zero(1, 1), "contrastive_empty");
    const Mat& z = embeddings.value();
    double total = 0.0;
    for (const Pair& p : pairs) {
        const double d2 = (z.row(p.i) - z.row(p.j)).squaredNorm();
        if (p.same) {
            total += d2;
        } else {
            const double d = std::sqrt(d2);
            const double gap = margin - d;
            if (gap > 0.0) total += gap * gap;
        }
    }
    const double np = static_cast<double>(pairs.size());
    Mat v(1, 1);
    v(0, 0) = total / np;
    int iz = embeddings.id;
    auto pair_copy = pairs;
    return t->make("contrastive", v,
                   [iz, pair_copy = std::move(pair_copy), margin, np](Tape& tp, const Mat& g) {
                       const Mat& z = tp.value(iz);
                       Mat dz = Mat::Zero(z.rows(), z.cols());
                       const double s = g(0, 0) / np;
                       for (const Pair& p : pair_copy) {
                           Eigen::RowVectorXd diff = z.row(p.i) - z.row(p.j);
                           if (p.same) {
                               dz.row(p.i) += 2.0 * s * diff;
                               dz.row(p.j) -= 2.0 * s * diff;
                           } else {
                               const double d = diff.norm();
                               if (d < margin && d > 1e-12) {
                                   const double c = -2.0 * (margin - d) / d * s;
                                   dz.row(p.i) += c * diff;
                                   dz.row(p.j) -= c * diff;
                               }
                           }
                       }
                       tp.add_grad(iz, dz);
                   });
}

Var spline_apply(const Var& pre, const Var& w, const Var& v,
                 std::shared_ptr<const SplineStack> stack) {
    const int units = stack->units();
    const int segs = stack->segments();
    if (pre.cols() != units) throw shape_error("spline_apply: pre.cols != units");
    if (w.rows() != segs || w.cols() != units) throw shape_error("spline_apply: w shape");
    if (v.cols() != units) throw shape_error("spline_apply: v shape");

    const Mat& u = pre.value();
    const Mat& wv = w.value();
    const Mat& vv = v.value();
    const Eigen::Index batch = u.rows();
    const int n_cubic = static_cast<int>(vv.rows());

    // Per-unit precomputation.
    Mat tw = wv.array().tanh();                              // segs x units
    Mat sv = (1.0 / (1.0 + (-vv.array()).exp())).matrix();   // n_cubic x units
    Eigen::VectorXd sig_sum = sv.colwise().sum();            // units

    // Normalized clamped inputs plus interior mask, cached for backward.
    auto xn = std::make_shared<Mat>(batch, units);
    auto interior = std::make_shared<Eigen::ArrayXXd>(batch, units);
    Mat out(batch, units);
    for (int j = 0; j < units; ++j) {
        const double lo = stack->knots(0, j);
        const double hi = stack->knots(segs, j);
        const double inv_span = 1.0 / (hi - lo);
        for (Eigen::Index b = 0; b < batch; ++b) {
            double t = (u(b, j) - lo) * inv_span;
            (*interior)(b, j) = (t > 0.0 && t < 1.0) ? inv_span : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            (*xn)(b, j) = t;
            double val = 0.0;
            for (int i = 0; i < segs; ++i) {
                const double k0 = (stack->knots(i, j) - lo) * inv_span;
                const double k1 = (stack->knots(i + 1, j) - lo) * inv_span;
                val += tw(i, j) * (std::max(t - k0, 0.0) - std::max(t - k1, 0.0));
            }
            out(b, j) = val + sig_sum(j) * t * t * t;
        }
    }

    int ip = pre.id, iw = w.id, iv = v.id;
    return pre.tape->make(
        "spline_stack", std::move(out),
        [ip, iw, iv, stack, xn, interior, tw, sv, n_cubic](Tape& tp, const Mat& g) {
            const int units = stack->units();
            const int segs = stack->segments();
            const Eigen::Index batch = xn->rows();
            Mat dpre(batch, units);
            Mat dw = Mat::Zero(segs, units);
            Mat dv = Mat::Zero(n_cubic, units);
            for (int j = 0; j < units; ++j) {
                const double lo = stack->knots(0, j);
                const double hi = stack->knots(segs, j);
                const double inv_span = 1.0 / (hi - lo);
                double sig_sum = 0.0;
                for (int i = 0; i < n_cubic; ++i) sig_sum += sv(i, j);
                for (Eigen::Index b = 0; b < batch; ++b) {
                    const double t = (*xn)(b, j);
                    const double gij = g(b, j);
                    double du = 3.0 * sig_sum * t * t;
                    for (int i = 0; i < segs; ++i) {
                        const double k0 = (stack->knots(i, j) - lo) * inv_span;
                        const double k1 = (stack->knots(i + 1, j) - lo) * inv_span;
                        const double ramp = std::max(t - k0, 0.0) - std::max(t - k1, 0.0);
                        dw(i, j) += gij * (1.0 - tw(i, j) * tw(i, j)) * ramp;
                        du += tw(i, j) * ((t > k0 ? 1.0 : 0.0) - (t > k1 ? 1.0 : 0.0));
                    }
                    const double t3 = t * t * t;
                    for (int i = 0; i < n_cubic; ++i) {
                        dv(i, j) += gij * sv(i, j) * (1.0 - sv(i, j)) * t3;
                    }
                    dpre(b, j) = gij * du * (*interior)(b, j);
                }
            }
            tp.add_grad(ip, dpre);
            tp.add_grad(iw, dw);
            tp.add_grad(iv, dv);
        });
}

Var bspline_mix(const Var& u, const Var& beta,
                std::shared_ptr<const std::vector<BSplineBasis>> bases) {
    const int d = static_cast<int>(u.cols());
    if (static_cast<int>(bases->size()) != d) throw shape_error("bspline_mix: basis count != cols");
    if (beta.cols() != d) throw shape_error("bspline_mix: beta.cols != cols");
    const Eigen::Index batch = u.rows();
    const Mat& uv = u.value();
    const Mat& bv = beta.value();

    struct Cache {
        Eigen::MatrixXi first;
        std::vector<double> vals;  // batch*d*4
        std::vector<double> ders;
        Eigen::ArrayXXd interior;
    };
    auto cache = std::make_shared<Cache>();
    cache->first.resize(batch, d);
    cache->vals.resize(static_cast<std::size_t>(batch) * d * 4);
    cache->ders.resize(static_cast<std::size_t>(batch) * d * 4);
    cache->interior.resize(batch, d);

    Mat out(batch, d);
    for (int j = 0; j < d; ++j) {
        const BSplineBasis& basis = (*bases)[static_cast<std::size_t>(j)];
        if (basis.degree() != BSplineBasis::kDegree) {
            throw shape_error("bspline_mix expects cubic bases");
        }
        if (bv.rows() != basis.size()) throw shape_error("bspline_mix: beta rows != basis size");
        const double a = basis.breakpoints()(0);
        const double b2 = basis.breakpoints()(basis.breakpoints().size() - 1);
        for (Eigen::Index b = 0; b < batch; ++b) {
            const std::size_t off = (static_cast<std::size_t>(b) * d + j) * 4;
            int first = 0;
            basis.eval_local(uv(b, j), &first, &cache->vals[off], &cache->ders[off]);
            cache->first(b, j) = first;
            cache->interior(b, j) = (uv(b, j) > a && uv(b, j) < b2) ? 1.0 : 0.0;
            double acc = 0.0;
            for (int r = 0; r < 4; ++r) acc += bv(first + r, j) * cache->vals[off + r];
            out(b, j) = acc;
        }
    }

    int iu = u.id, ib = beta.id;
    return u.tape->make("bspline_mix", std::move(out),
                        [iu, ib, cache, d, batch](Tape& tp, const Mat& g) {
                            const Mat& bv = tp.value(ib);
                            Mat du(batch, d);
                            Mat dbeta = Mat::Zero(bv.rows(), bv.cols());
                            for (int j = 0; j < d; ++j) {
                                for (Eigen::Index b = 0; b < batch; ++b) {
                                    const std::size_t off =
                                        (static_cast<std::size_t>(b) * d + j) * 4;
                                    const int first = cache->first(b, j);
                                    const double gij = g(b, j);
                                    double dd = 0.0;
                                    for (int r = 0; r < 4; ++r) {
                                        dd += bv(first + r, j) * cache->ders[off + r];
                                        dbeta(first + r, j) += gij * cache->vals[off + r];
                                    }
                                    du(b, j) = gij * dd * cache->interior(b, j);
                                }
                            }
                            tp.add_grad(iu, du);
                            tp.add_grad(ib, dbeta);
                        });
}

Var mix(const Var& probs, const Var& heads) {
    require_same_shape(probs, heads, "mix");
    int ip = probs.id, ih = heads.id;
    Mat v = probs.value().cwiseProduct(heads.value()).rowwise().sum();
    return probs.tape->make("mix", v, [ip, ih](Tape& tp, const Mat& g) {
        const Mat& p = tp.value(ip);
        const Mat& h = tp.value(ih);
        Mat gb = g.replicate(1, p.cols());
        tp.add_grad(ip, gb.cwiseProduct(h));
        tp.add_grad(ih, gb.cwiseProduct(p));
    });
}

Var hstack(const std::vector<Var>& cols) {
    if (cols.empty()) throw shape_error("hstack: no columns");
    Tape* t = cols[0].tape;
    const Eigen::Index b = cols[0].rows();
    Mat v(b, static_cast<Eigen::Index>(cols.size()));
    std::vector<int> ids;
    ids.reserve(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (cols[j].rows() != b || cols[j].cols() != 1) throw shape_error("hstack: need B x 1 columns");
        v.col(static_cast<Eigen::Index>(j)) = cols[j].value();
        ids.push_back(cols[j].id);
    }
    return t->make("hstack", std::move(v), [ids](Tape& tp, const Mat& g) {
        for (std::size_t j = 0; j < ids.size(); ++j) {
            tp.add_grad(ids[j], g.col(static_cast<Eigen::Index>(j)));
        }
    });
}

Var col(const Var& a, int j) {
    if (j < 0 || j >= a.cols()) throw shape_error("col: index out of range");
    int ia = a.id;
    return a.tape->make("col", a.value().col(j), [ia, j](Tape& tp, const Mat& g) {
        const Mat& av = tp.value(ia);
        Mat da = Mat::Zero(av.rows(), av.cols());
        da.col(j) = g;
        tp.add_grad(ia, da);
    });
}

std::pair<double, std::vector<Mat>> evaluate_with_gradients(
    const ExprBuilder& build, const std::vector<Parameter*>& params) {
    for (auto* p : params) p->zero_grad();
    Tape tape;
    Var root = build(tape);
    const double value = root.value()(0, 0);
    tape.backward(root);
    std::vector<Mat> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(p->grad);
    return {value, grads};
}

double check_gradients(const ExprBuilder& build, const std::vector<Parameter*>& params,
                       double epsilon) {
    if (epsilon < 1e-7 || epsilon > 1e-3) {
        throw parameter_error("finite-difference epsilon must lie in [1e-7, 1e-3]");
    }
    auto [value, grads] = evaluate_with_gradients(build, params);
    (void)value;
    auto eval_only = [&]() {
        Tape tape;
        return build(tape).value()(0, 0);
    };
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                const double saved = p.value(r, c);
                p.value(r, c) = saved + epsilon;
                const double up = eval_only();
                p.value(r, c) = saved - epsilon;
                const double down = eval_only();
                p.value(r, c) = saved;
                if (!std::isfinite(up) || !std::isfinite(down)) {
                    throw numeric_fault("non-finite perturbation result at parameter '" + p.name +
                                        "'");
                }
                const double fd = (up - down) / (2.0 * epsilon);
                const double analytic = grads[pi](r, c);
                const double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

}  // namespace kasper::ad
