#pragma once

#include <span>

namespace grounder {

// Axis-aligned box in pixel coordinates.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool valid() const { return x_min < x_max && y_min < y_max; }
  double area() const { return (x_max - x_min) * (y_max - y_min); }
  bool operator==(const Box&) const = default;
};

// Intersection over union in [0, 1]; 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

// Smallest box covering all inputs. Empty input is a PreconditionError.
Box union_box(std::span<const Box> boxes);

}  // namespace grounder
