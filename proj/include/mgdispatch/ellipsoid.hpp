#pragma once

#include "mgdispatch/linalg.hpp"

namespace mgd {

// The set { x : (x - center)' shape^{-1} (x - center) <= 1 } with SPD shape.
struct Ellipsoid {
  Vec center;
  Mat shape;
};

// Validates and repairs a candidate ellipsoid: asymmetry above 1e-10 is an
// error, smaller asymmetry is symmetrized away; a minimum eigenvalue in
// (-1e-9, 0] is nudged by +1e-9 I, anything lower is an error.
Ellipsoid make_ellipsoid(const Vec& center, const Mat& shape);

bool contains(const Ellipsoid& e, const Vec& x, double tol = 1e-9);

// Squared Mahalanobis distance (x - c)' P^{-1} (x - c).
double containment_margin(const Ellipsoid& e, const Vec& x);

struct NoiseBounds {
  Mat Q;  // process-noise shape, SPD
  Mat R;  // measurement-noise shape, SPD

  void validate() const;
};

}  // namespace mgd
