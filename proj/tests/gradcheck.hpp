#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bt/rng.hpp"
#include "bt/tape.hpp"

// Central finite-difference oracle for vector-Jacobian products. Lives in
// test code only; it rebuilds the forward pass from scratch for every
// perturbed parameter entry, so it shares nothing with the tape's backward
// implementation.
namespace btt {

using BuildFn = std::function<bt::Tape<double>::Id(bt::Tape<double>&)>;

struct GradcheckResult {
  double max_rel = 0.0;
  std::int64_t checked = 0;
};

// Relative error with an absolute floor so exactly-zero gradients (for
// example a key bias under softmax shift invariance) are not judged
// against finite-difference roundoff noise.
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::fabs(a - b) / (floor + std::max(std::fabs(a), std::fabs(b)));
}

inline double eval_loss(const BuildFn& build) {
  bt::Tape<double> tp;
  return tp.value(build(tp))[0];
}

inline GradcheckResult gradcheck(const std::vector<bt::Parameter<double>*>& params,
                                 const BuildFn& build, double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    bt::Tape<double> tp;
    tp.backward(build(tp));
  }
  GradcheckResult res;
  for (auto* p : params) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double save = p->value[i];
      p->value[i] = save + eps;
      const double up = eval_loss(build);
      p->value[i] = save - eps;
      const double down = eval_loss(build);
      p->value[i] = save;
      const double fd = (up - down) / (2.0 * eps);
      res.max_rel = std::max(res.max_rel, rel_err(fd, p->grad[i]));
      ++res.checked;
    }
  }
  return res;
}

template <typename T>
bt::Tensor<T> random_tensor(bt::Shape shape, bt::rng::Stream& rs, double scale = 1.0) {
  bt::Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(scale * rs.next_gauss());
  return t;
}

template <typename T>
bt::Parameter<T> random_param(const std::string& name, bt::Shape shape,
                              bt::rng::Stream& rs, double scale = 1.0) {
  return bt::Parameter<T>(name, random_tensor<T>(std::move(shape), rs, scale));
}

}  // namespace btt
