#include "grounder/box.hpp"

#include <algorithm>

#include "grounder/error.hpp"

namespace grounder {

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

Box union_box(std::span<const Box> boxes) {
  if (boxes.empty()) throw PreconditionError("union_box: empty box list");
  Box u = boxes.front();
  for (const Box& b : boxes.subspan(1)) {
    u.x_min = std::min(u.x_min, b.x_min);
    u.y_min = std::min(u.y_min, b.y_min);
    u.x_max = std::max(u.x_max, b.x_max);
    u.y_max = std::max(u.y_max, b.y_max);
  }
  return u;
}

}  // namespace grounder
