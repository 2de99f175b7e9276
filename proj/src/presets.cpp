#include "zoforge/presets.hpp"

namespace zoforge {

namespace {

Shape require_image(const Shape& input, std::size_t divisor, const std::string& name) {
  if (input.size() != 3 || input[1] % divisor != 0 || input[2] % divisor != 0 ||
      input[1] == 0 || input[2] == 0) {
    throw ConfigError("model: '" + name + "' needs (C, H, W) inputs with H and W divisible by " +
                      std::to_string(divisor) + ", got " + shape_to_string(input));
  }
  return input;
}

}  // namespace

ModelSpec mlp_model(const Shape& input, std::size_t hidden, std::size_t classes,
                    std::size_t depth) {
  ModelSpec spec{input, {}};
  if (input.size() > 1) spec.layers.push_back(Flatten{});
  std::size_t in = shape_numel(input);
  for (std::size_t k = 0; k < depth; ++k) {
    spec.layers.push_back(Dense{in, hidden});
    spec.layers.push_back(ReLU{});
    in = hidden;
  }
  spec.layers.push_back(Dense{in, classes});
  return spec;
}

ModelSpec small_cnn(const Shape& input, std::size_t classes, std::size_t width) {
  require_image(input, 4, "cnn");
  const std::size_t c = input[0], h = input[1] / 4, w = input[2] / 4;
  return {input,
          {Conv2d{c, width, 3, 1, 1}, ReLU{}, MaxPool{2}, Conv2d{width, 2 * width, 3, 1, 1},
           ReLU{}, AvgPool{2}, Flatten{}, Dense{2 * width * h * w, classes}}};
}

ModelSpec deep_cnn(const Shape& input, std::size_t classes, std::size_t width) {
  require_image(input, 2, "cnn8");
  const std::size_t c = input[0], h = input[1] / 2, w = input[2] / 2;
  return {input,
          {Conv2d{c, width, 3, 1, 1}, BatchNorm{width}, ReLU{}, Conv2d{width, width, 3, 1, 1},
           ReLU{}, MaxPool{2}, Flatten{}, Dense{width * h * w, classes}}};
}

ModelSpec build_model(const std::string& name, const Shape& input, std::size_t classes,
                      std::size_t size) {
  if (name == "linear") return mlp_model(input, size, classes, 0);
  if (name == "mlp") return mlp_model(input, size, classes, 2);
  if (name == "cnn") return small_cnn(input, classes, size);
  if (name == "cnn8") return deep_cnn(input, classes, size);
  throw ConfigError("model.kind: unknown model '" + name + "' (linear, mlp, cnn, cnn8)");
}

}  // namespace zoforge
