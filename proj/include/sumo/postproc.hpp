#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sumo/events.hpp"
#include "sumo/tensor.hpp"

namespace sumo::postproc {

// Centered moving average; edge windows shrink to the available samples so
// constant inputs stay constant. For even widths the window extends one
// sample further to the right.
template <typename T>
std::vector<T> moving_average(std::span<const T> p, std::size_t width) {
  const std::size_t n = p.size();
  std::vector<T> out(n);
  if (width <= 1) {
    std::copy(p.begin(), p.end(), out.begin());
    return out;
  }
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + static_cast<double>(p[i]);
  const std::size_t left = (width - 1) / 2;
  const std::size_t right = width - 1 - left;
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t lo = t >= left ? t - left : 0;
    std::size_t hi = std::min(n - 1, t + right);
    out[t] = static_cast<T>((prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1));
  }
  return out;
}

template <typename T>
std::vector<T> moving_average(const std::vector<T>& p, std::size_t width) {
  return moving_average(std::span<const T>(p), width);
}

// Turns the two-channel probability track into discrete events: smooth both
// channels, mark samples where the spindle channel strictly wins, and join
// consecutive marks into events. Channel 0 is no-spindle, channel 1 spindle.
template <typename T>
EventList extract_events(const Tensor<T>& probs, std::size_t width, double fs,
                         double min_duration_s = 0.0) {
  if (probs.rank() != 2 || probs.dim(0) != 2)
    throw ShapeError("extract_events expects a [2, T] probability tensor");
  const std::size_t n = probs.dim(1);
  std::span<const T> ch0(probs.data(), n);
  std::span<const T> ch1(probs.data() + n, n);
  std::vector<T> smooth0 = moving_average(ch0, width);
  std::vector<T> smooth1 = moving_average(ch1, width);

  EventList events;
  std::size_t run_start = 0;
  bool in_run = false;
  for (std::size_t t = 0; t <= n; ++t) {
    bool active = t < n && smooth1[t] > smooth0[t];
    if (active && !in_run) {
      run_start = t;
      in_run = true;
    } else if (!active && in_run) {
      SpindleEvent e{static_cast<double>(run_start) / fs,
                     static_cast<double>(t - run_start) / fs};
      if (e.duration_s >= min_duration_s) events.push_back(e);
      in_run = false;
    }
  }
  return events;
}

}  // namespace sumo::postproc
