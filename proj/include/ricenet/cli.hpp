#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ricenet/model.hpp"

namespace ricenet::cli {

enum ExitCode : int {
    exit_ok = 0,
    exit_failure = 1,
    exit_config = 2,    ///< bad flags, config, manifest or model file
    exit_training = 3,  ///< training aborted
    exit_predict = 4,   ///< at least one image could not be classified
};

/// Runs one command line (without the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/**
 * Architecture used by `train` when no backbone is given:
 * three base.conv/relu/pool blocks (16, 32, 64 channels, 3x3 same convolutions, 2x2 pooling)
 * followed by head.gap -> head.fc -> head.softmax.
 */
Model<float> default_architecture(std::size_t height, std::size_t width, std::vector<std::string> class_labels,
                                  std::uint64_t seed);

}  // namespace ricenet::cli
