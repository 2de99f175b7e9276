#pragma once

#include <string>

#include "zoforge/model.hpp"

namespace zoforge {

// Dense stack: `depth` hidden layers of `hidden` units with ReLU, then a
// classifier. Inputs of any rank are flattened first.
ModelSpec mlp_model(const Shape& input, std::size_t hidden, std::size_t classes,
                    std::size_t depth = 2);

// Conv(w) - ReLU - MaxPool2 - Conv(2w) - ReLU - AvgPool2 - Flatten - Dense
// on (C, H, W) inputs with H and W divisible by 4.
ModelSpec small_cnn(const Shape& input, std::size_t classes, std::size_t width);

// Eight parameterized-or-not layers: Conv(w) - BN - ReLU - Conv(w) - ReLU -
// MaxPool2 - Flatten - Dense, on (C, H, W) inputs with even H and W.
ModelSpec deep_cnn(const Shape& input, std::size_t classes, std::size_t width);

// "linear", "mlp", "cnn" or "cnn8". `size` is the hidden width for the
// dense presets and the channel width for the convolutional ones. Throws
// ConfigError for an unknown name.
ModelSpec build_model(const std::string& name, const Shape& input, std::size_t classes,
                      std::size_t size);

}  // namespace zoforge
