#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace trajdiff::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to a matrix-valued node on a tape.
struct Expr {
  Tape* tape = nullptr;
  int idx = -1;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

/// Reverse-mode tape over dense matrices. Forward values are computed eagerly;
/// each op records a closure that scatters its output gradient to its parents.
/// A tape is single-use: build, backward once, read gradients.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Mat&)>;

  Expr constant(Mat v) { return push(std::move(v), false, nullptr); }
  Expr leaf(Mat v) { return push(std::move(v), true, nullptr); }

  const Mat& value(Expr e) const { return nodes_[static_cast<std::size_t>(e.idx)].value; }

  /// Gradient of the last backward() w.r.t. node e; zeros if the node was
  /// never reached.
  Mat grad(Expr e) const {
    const Node& n = nodes_[static_cast<std::size_t>(e.idx)];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be 1x1.
  void backward(Expr loss);

  /// Accumulate into a parent's gradient buffer (no-op for constant subgraphs).
  void accumulate(int idx, const Mat& g);

  bool needs_grad(int idx) const { return nodes_[static_cast<std::size_t>(idx)].needs_grad; }

  Expr push(Mat value, bool needs_grad, BackFn back);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until first accumulation
    bool needs_grad = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

inline Eigen::Index Expr::rows() const { return tape->value(*this).rows(); }
inline Eigen::Index Expr::cols() const { return tape->value(*this).cols(); }

// Elementwise / linear algebra primitives. All shapes are validated and throw
// ShapeMismatch on violation.
Expr matmul(Expr a, Expr b);
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr scale(Expr a, double s);
Expr cmul(Expr a, Expr b);
Expr add_rowvec(Expr a, Expr b);  // b: 1 x cols, broadcast over rows
Expr mul_rowvec(Expr a, Expr b);
Expr mul_scalar(Expr a, Expr s);  // s: 1 x 1
Expr block(Expr a, Eigen::Index i0, Eigen::Index j0, Eigen::Index r, Eigen::Index c);
Expr hstack(Expr a, Expr b);
Expr vstack(Expr a, Expr b);
Expr transpose(Expr a);
Expr gather_rows(Expr a, std::vector<int> rows);

/// out(i, f) = max over the k neighbor rows nbr[i*k .. i*k+k-1] of a(., f).
Expr knn_max(Expr a, std::vector<int> nbr, int k);

Expr layer_norm_rows(Expr a, double eps = 1e-6);
Expr softmax_rows(Expr a);
Expr gelu(Expr a);  // tanh approximation
Expr relu(Expr a);
Expr exp_elem(Expr a);
Expr sqrt_elem(Expr a);

/// acos of the input clamped to [-1, 1]; zero derivative outside (-1, 1).
Expr acos_clamped(Expr a);

/// Row-wise v / max(‖v‖, floor).
Expr normalize_rows(Expr a, double floor = 1e-8);

/// Cross product of two 1x3 rows.
Expr cross3(Expr a, Expr b);

Expr sum(Expr a);   // 1x1
Expr mean(Expr a);  // 1x1

inline Expr square(Expr a) { return cmul(a, a); }
inline Expr affine(Expr x, Expr w, Expr b) { return add_rowvec(matmul(x, w), b); }

inline Expr operator+(Expr a, Expr b) { return add(a, b); }
inline Expr operator-(Expr a, Expr b) { return sub(a, b); }
inline Expr operator*(double s, Expr a) { return scale(a, s); }

}  // namespace trajdiff::ad
