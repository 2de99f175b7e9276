#include "zoforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace zoforge {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

[[noreturn]] void shape_fail(const Layer& layer, const Shape& in,
                             const std::string& why) {
  throw ShapeError(layer_name(layer) + " cannot take input " +
                   shape_to_string(in) + ": " + why);
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::string layer_name(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Dense& l) {
            return "Dense(" + std::to_string(l.in) + "," +
                   std::to_string(l.out) + (l.bias ? ",bias)" : ",no-bias)");
          },
          [](const Conv2d& l) {
            return "Conv2d(" + std::to_string(l.in_ch) + "," +
                   std::to_string(l.out_ch) + ",k" + std::to_string(l.kernel) +
                   ",s" + std::to_string(l.stride) + ",p" +
                   std::to_string(l.pad) + (l.bias ? ",bias)" : ",no-bias)");
          },
          [](const BatchNorm& l) {
            return "BatchNorm(" + std::to_string(l.ch) + ")";
          },
          [](const ReLU&) { return std::string("ReLU"); },
          [](const MaxPool& l) {
            return "MaxPool(" + std::to_string(l.k) + ")";
          },
          [](const AvgPool& l) {
            return "AvgPool(" + std::to_string(l.k) + ")";
          },
          [](const Flatten&) { return std::string("Flatten"); },
      },
      layer);
}

std::size_t layer_param_count(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Dense& l) { return l.in * l.out + (l.bias ? l.out : 0); },
          [](const Conv2d& l) {
            return l.out_ch * l.in_ch * l.kernel * l.kernel +
                   (l.bias ? l.out_ch : 0);
          },
          [](const BatchNorm& l) { return 2 * l.ch; },
          [](const auto&) { return std::size_t{0}; },
      },
      layer);
}

Shape layer_output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Dense& l) -> Shape {
            if (in.size() != 1 || in[0] != l.in) {
              shape_fail(layer, in, "expects a flat vector of " +
                                        std::to_string(l.in) + " features");
            }
            if (l.out == 0) shape_fail(layer, in, "zero outputs");
            return {l.out};
          },
          [&](const Conv2d& l) -> Shape {
            if (in.size() != 3 || in[0] != l.in_ch) {
              shape_fail(layer, in, "expects (" + std::to_string(l.in_ch) +
                                        "xHxW)");
            }
            if (l.kernel == 0 || l.stride == 0 || l.out_ch == 0) {
              shape_fail(layer, in, "kernel, stride and channels must be > 0");
            }
            const std::size_t h = in[1] + 2 * l.pad;
            const std::size_t w = in[2] + 2 * l.pad;
            if (h < l.kernel || w < l.kernel) {
              shape_fail(layer, in, "kernel larger than padded input");
            }
            return {l.out_ch, (h - l.kernel) / l.stride + 1,
                    (w - l.kernel) / l.stride + 1};
          },
          [&](const BatchNorm& l) -> Shape {
            if (in.empty() || in[0] != l.ch || (in.size() != 1 && in.size() != 3)) {
              shape_fail(layer, in, "channel count mismatch");
            }
            return in;
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const MaxPool& l) -> Shape {
            if (in.size() != 3 || l.k == 0 || in[1] < l.k || in[2] < l.k) {
              shape_fail(layer, in, "needs (CxHxW) with H,W >= k");
            }
            return {in[0], in[1] / l.k, in[2] / l.k};
          },
          [&](const AvgPool& l) -> Shape {
            if (in.size() != 3 || l.k == 0 || in[1] < l.k || in[2] < l.k) {
              shape_fail(layer, in, "needs (CxHxW) with H,W >= k");
            }
            return {in[0], in[1] / l.k, in[2] / l.k};
          },
          [&](const Flatten&) -> Shape { return {shape_numel(in)}; },
      },
      layer);
}

std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input.empty() || shape_numel(spec.input) == 0) {
    throw ShapeError("model input shape is empty");
  }
  std::vector<Shape> shapes{spec.input};
  shapes.reserve(spec.layers.size() + 1);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    try {
      shapes.push_back(layer_output_shape(spec.layers[i], shapes.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  if (shapes.back().size() != 1) {
    throw ShapeError("final activation " + shape_to_string(shapes.back()) +
                     " is not a flat logit vector");
  }
  return shapes;
}

std::size_t param_count(const ModelSpec& spec) {
  infer_shapes(spec);
  std::size_t d = 0;
  for (const auto& layer : spec.layers) d += layer_param_count(layer);
  return d;
}

std::size_t num_classes(const ModelSpec& spec) {
  return infer_shapes(spec).back()[0];
}

std::vector<Segment> segment_table(const ModelSpec& spec) {
  std::vector<Segment> segs;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::size_t n = layer_param_count(spec.layers[i]);
    if (n == 0) continue;
    segs.push_back({offset, n, i});
    offset += n;
  }
  return segs;
}

template <class T>
ParamVector<T>::ParamVector(std::vector<T> values, std::vector<Segment> segments)
    : values_(std::move(values)), segments_(std::move(segments)) {
  std::size_t expect = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (s.offset != expect || s.length == 0) {
      throw ShapeError("segment table must cover [0, d) contiguously");
    }
    if (i > 0 && s.layer <= segments_[i - 1].layer) {
      throw ShapeError("segments must be ordered by layer index");
    }
    expect += s.length;
  }
  if (expect != values_.size()) {
    throw ShapeError("segment lengths sum to " + std::to_string(expect) +
                     " but d = " + std::to_string(values_.size()));
  }
}

template <class T>
ParamVector<T> ParamVector<T>::zeros(const ModelSpec& spec) {
  return ParamVector(std::vector<T>(param_count(spec), T{0}),
                     segment_table(spec));
}

template <class T>
std::size_t ParamVector<T>::layer_of(std::size_t i) const {
  if (i >= values_.size()) {
    throw RangeError("coordinate " + std::to_string(i) + " out of range [0, " +
                     std::to_string(values_.size()) + ")");
  }
  auto it = std::upper_bound(
      segments_.begin(), segments_.end(), i,
      [](std::size_t v, const Segment& s) { return v < s.offset; });
  return std::prev(it)->layer;
}

template <class T>
const Segment* ParamVector<T>::segment_for_layer(std::size_t layer) const {
  for (const auto& s : segments_) {
    if (s.layer == layer) return &s;
  }
  return nullptr;
}

template <class T>
std::span<const T> ParamVector<T>::layer_values(std::size_t layer) const {
  const Segment* s = segment_for_layer(layer);
  if (!s) return {};
  return std::span<const T>(values_).subspan(s->offset, s->length);
}

template <class T>
ParamVector<T> init_params(const ModelSpec& spec, std::uint64_t seed) {
  auto p = ParamVector<T>::zeros(spec);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto values = p.values();
  for (const auto& seg : p.segments()) {
    const Layer& layer = spec.layers[seg.layer];
    auto out = values.subspan(seg.offset, seg.length);
    if (const auto* l = std::get_if<Dense>(&layer)) {
      const double std_dev = std::sqrt(2.0 / static_cast<double>(l->in));
      for (std::size_t i = 0; i < l->in * l->out; ++i) {
        out[i] = static_cast<T>(std_dev * normal(rng));
      }
    } else if (const auto* l = std::get_if<Conv2d>(&layer)) {
      const std::size_t fan_in = l->in_ch * l->kernel * l->kernel;
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < l->out_ch * fan_in; ++i) {
        out[i] = static_cast<T>(std_dev * normal(rng));
      }
    } else if (const auto* l = std::get_if<BatchNorm>(&layer)) {
      std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(l->ch), T{1});
    }
  }
  return p;
}

template class ParamVector<float>;
template class ParamVector<double>;
template ParamVector<float> init_params<float>(const ModelSpec&, std::uint64_t);
template ParamVector<double> init_params<double>(const ModelSpec&, std::uint64_t);

}  // namespace zoforge
