#include "trajdiff/ad.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "trajdiff/errors.hpp"

namespace trajdiff::ad {

namespace {

void check_same_tape(Expr a, Expr b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ShapeMismatch("operands from different tapes");
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": operand shapes differ");
}

}  // namespace

Expr Tape::push(Mat value, bool needs, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Expr{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int idx, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Expr loss) {
  const Node& ln = nodes_[static_cast<std::size_t>(loss.idx)];
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw ShapeMismatch("backward seed must be a 1x1 node");
  accumulate(loss.idx, Mat::Ones(1, 1));
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

Expr matmul(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g * tp.value(Expr{&tp, bi}).transpose());
      tp.accumulate(bi, tp.value(Expr{&tp, ai}).transpose() * g);
    };
  }
  return t.push(av * bv, needs, std::move(back));
}

Expr add(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  check_same_shape(av, bv, "add");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g);
      tp.accumulate(bi, g);
    };
  }
  return t.push(av + bv, needs, std::move(back));
}

Expr sub(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  check_same_shape(av, bv, "sub");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g);
      tp.accumulate(bi, -g);
    };
  }
  return t.push(av - bv, needs, std::move(back));
}

Expr scale(Expr a, double s) {
  Tape& t = *a.tape;
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, s](Tape& tp, const Mat& g) { tp.accumulate(ai, s * g); };
  }
  return t.push(s * t.value(a), needs, std::move(back));
}

Expr cmul(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  check_same_shape(av, bv, "cmul");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g.cwiseProduct(tp.value(Expr{&tp, bi})));
      tp.accumulate(bi, g.cwiseProduct(tp.value(Expr{&tp, ai})));
    };
  }
  return t.push(av.cwiseProduct(bv), needs, std::move(back));
}

Expr add_rowvec(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw ShapeMismatch("add_rowvec: need 1 x cols");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g);
      tp.accumulate(bi, g.colwise().sum());
    };
  }
  return t.push(av.rowwise() + bv.row(0), needs, std::move(back));
}

Expr mul_rowvec(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw ShapeMismatch("mul_rowvec: need 1 x cols");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      const Mat& av2 = tp.value(Expr{&tp, ai});
      const Mat& bv2 = tp.value(Expr{&tp, bi});
      tp.accumulate(ai, g.array().rowwise() * bv2.row(0).array());
      tp.accumulate(bi, (g.cwiseProduct(av2)).colwise().sum());
    };
  }
  return t.push((av.array().rowwise() * bv.row(0).array()).matrix(), needs, std::move(back));
}

Expr mul_scalar(Expr a, Expr s) {
  check_same_tape(a, s);
  Tape& t = *a.tape;
  const Mat& sv = t.value(s);
  if (sv.rows() != 1 || sv.cols() != 1) throw ShapeMismatch("mul_scalar: scale must be 1x1");
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(s.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, si = s.idx](Tape& tp, const Mat& g) {
      const double sc = tp.value(Expr{&tp, si})(0, 0);
      tp.accumulate(ai, sc * g);
      Mat gs(1, 1);
      gs(0, 0) = g.cwiseProduct(tp.value(Expr{&tp, ai})).sum();
      tp.accumulate(si, gs);
    };
  }
  return t.push(sv(0, 0) * t.value(a), needs, std::move(back));
}

Expr block(Expr a, Eigen::Index i0, Eigen::Index j0, Eigen::Index r, Eigen::Index c) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if (i0 < 0 || j0 < 0 || i0 + r > av.rows() || j0 + c > av.cols())
    throw ShapeMismatch("block: range out of bounds");
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, i0, j0, r, c](Tape& tp, const Mat& g) {
      const Mat& av2 = tp.value(Expr{&tp, ai});
      Mat full = Mat::Zero(av2.rows(), av2.cols());
      full.block(i0, j0, r, c) = g;
      tp.accumulate(ai, full);
    };
  }
  return t.push(av.block(i0, j0, r, c), needs, std::move(back));
}

Expr hstack(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != bv.rows()) throw ShapeMismatch("hstack: row counts differ");
  Mat out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx, ac = av.cols()](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g.leftCols(ac));
      tp.accumulate(bi, g.rightCols(g.cols() - ac));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr vstack(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.cols()) throw ShapeMismatch("vstack: column counts differ");
  Mat out(av.rows() + bv.rows(), av.cols());
  out << av, bv;
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx, ar = av.rows()](Tape& tp, const Mat& g) {
      tp.accumulate(ai, g.topRows(ar));
      tp.accumulate(bi, g.bottomRows(g.rows() - ar));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr transpose(Expr a) {
  Tape& t = *a.tape;
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx](Tape& tp, const Mat& g) { tp.accumulate(ai, g.transpose()); };
  }
  return t.push(t.value(a).transpose(), needs, std::move(back));
}

Expr gather_rows(Expr a, std::vector<int> rows) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw ShapeMismatch("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, rows = std::move(rows)](Tape& tp, const Mat& g) {
      const Mat& av2 = tp.value(Expr{&tp, ai});
      Mat full = Mat::Zero(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) full.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      tp.accumulate(ai, full);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr knn_max(Expr a, std::vector<int> nbr, int k) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if (k < 1 || nbr.size() % static_cast<std::size_t>(k) != 0)
    throw ShapeMismatch("knn_max: neighbor list not a multiple of k");
  const Eigen::Index n = static_cast<Eigen::Index>(nbr.size()) / k;
  const Eigen::Index f = av.cols();
  Mat out(n, f);
  Eigen::MatrixXi arg(n, f);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < f; ++c) {
      const int r0 = nbr[static_cast<std::size_t>(i * k)];
      double best = av(r0, c);
      int best_r = r0;
      for (int j = 1; j < k; ++j) {
        const int r = nbr[static_cast<std::size_t>(i * k + j)];
        if (av(r, c) > best) {
          best = av(r, c);
          best_r = r;
        }
      }
      out(i, c) = best;
      arg(i, c) = best_r;
    }
  }
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, arg = std::move(arg)](Tape& tp, const Mat& g) {
      const Mat& av2 = tp.value(Expr{&tp, ai});
      Mat full = Mat::Zero(av2.rows(), av2.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index c = 0; c < g.cols(); ++c) full(arg(i, c), c) += g(i, c);
      tp.accumulate(ai, full);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr layer_norm_rows(Expr a, double eps) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Eigen::Index n = av.cols();
  Mat out(av.rows(), n);
  Eigen::VectorXd inv_std(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double mu = av.row(i).mean();
    const double var = (av.row(i).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(i) = inv;
    out.row(i) = (av.row(i).array() - mu) * inv;
  }
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, out, inv_std = std::move(inv_std)](Tape& tp, const Mat& g) {
      Mat dx(g.rows(), g.cols());
      const double n = static_cast<double>(g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double gm = g.row(i).mean();
        const double gym = g.row(i).cwiseProduct(out.row(i)).sum() / n;
        dx.row(i) = inv_std(i) * (g.row(i).array() - gm - out.row(i).array() * gym);
      }
      tp.accumulate(ai, dx);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr softmax_rows(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double m = av.row(i).maxCoeff();
    Eigen::ArrayXd e = (av.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, out](Tape& tp, const Mat& g) {
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double dot = g.row(i).cwiseProduct(out.row(i)).sum();
        dx.row(i) = out.row(i).array() * (g.row(i).array() - dot);
      }
      tp.accumulate(ai, dx);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr gelu(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const double c = std::sqrt(2.0 / std::numbers::pi);
  Mat out = av.unaryExpr([c](double x) {
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  });
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, c](Tape& tp, const Mat& g) {
      const Mat& x = tp.value(Expr{&tp, ai});
      Mat d = x.unaryExpr([c](double v) {
        const double u = c * (v + 0.044715 * v * v * v);
        const double th = std::tanh(u);
        const double sech2 = 1.0 - th * th;
        return 0.5 * (1.0 + th) + 0.5 * v * sech2 * c * (1.0 + 3.0 * 0.044715 * v * v);
      });
      tp.accumulate(ai, g.cwiseProduct(d));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr relu(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx](Tape& tp, const Mat& g) {
      const Mat& x = tp.value(Expr{&tp, ai});
      tp.accumulate(ai, g.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; })));
    };
  }
  return t.push(av.cwiseMax(0.0), needs, std::move(back));
}

Expr exp_elem(Expr a) {
  Tape& t = *a.tape;
  Mat out = t.value(a).array().exp();
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, out](Tape& tp, const Mat& g) { tp.accumulate(ai, g.cwiseProduct(out)); };
  }
  return t.push(out, needs, std::move(back));
}

Expr sqrt_elem(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if ((av.array() < 0.0).any()) throw NumericError("sqrt of negative value");
  Mat out = av.array().sqrt();
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, out](Tape& tp, const Mat& g) {
      Mat d = out.unaryExpr([](double y) { return y > 0.0 ? 0.5 / y : 0.0; });
      tp.accumulate(ai, g.cwiseProduct(d));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr acos_clamped(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out = av.unaryExpr([](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); });
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx](Tape& tp, const Mat& g) {
      const Mat& x = tp.value(Expr{&tp, ai});
      Mat d = x.unaryExpr([](double v) {
        return std::abs(v) < 1.0 ? -1.0 / std::sqrt(1.0 - v * v) : 0.0;
      });
      tp.accumulate(ai, g.cwiseProduct(d));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr normalize_rows(Expr a, double floor) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(av.rows(), av.cols());
  Eigen::VectorXd norms(av.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double n = std::max(av.row(i).norm(), floor);
    norms(i) = n;
    out.row(i) = av.row(i) / n;
  }
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, norms = std::move(norms), floor](Tape& tp, const Mat& g) {
      const Mat& v = tp.value(Expr{&tp, ai});
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double n = norms(i);
        if (v.row(i).norm() > floor) {
          const double vg = v.row(i).cwiseProduct(g.row(i)).sum();
          dx.row(i) = g.row(i) / n - v.row(i) * (vg / (n * n * n));
        } else {
          dx.row(i) = g.row(i) / n;
        }
      }
      tp.accumulate(ai, dx);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr cross3(Expr a, Expr b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != 1 || av.cols() != 3 || bv.rows() != 1 || bv.cols() != 3)
    throw ShapeMismatch("cross3: operands must be 1x3");
  const Eigen::Vector3d x = av.row(0);
  const Eigen::Vector3d y = bv.row(0);
  Mat out(1, 3);
  out.row(0) = x.cross(y).transpose();
  const bool needs = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, bi = b.idx](Tape& tp, const Mat& g) {
      const Eigen::Vector3d x2 = tp.value(Expr{&tp, ai}).row(0);
      const Eigen::Vector3d y2 = tp.value(Expr{&tp, bi}).row(0);
      const Eigen::Vector3d gv = g.row(0);
      Mat ga(1, 3), gb(1, 3);
      ga.row(0) = y2.cross(gv).transpose();
      gb.row(0) = gv.cross(x2).transpose();
      tp.accumulate(ai, ga);
      tp.accumulate(bi, gb);
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr sum(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(1, 1);
  out(0, 0) = av.sum();
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, r = av.rows(), c = av.cols()](Tape& tp, const Mat& g) {
      tp.accumulate(ai, Mat::Constant(r, c, g(0, 0)));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

Expr mean(Expr a) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const double n = static_cast<double>(av.size());
  Mat out(1, 1);
  out(0, 0) = av.sum() / n;
  const bool needs = t.needs_grad(a.idx);
  Tape::BackFn back;
  if (needs) {
    back = [ai = a.idx, r = av.rows(), c = av.cols(), n](Tape& tp, const Mat& g) {
      tp.accumulate(ai, Mat::Constant(r, c, g(0, 0) / n));
    };
  }
  return t.push(std::move(out), needs, std::move(back));
}

}  // namespace trajdiff::ad
