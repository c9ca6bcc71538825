#pragma once

#include <span>
#include <string>
#include <vector>

#include "ricenet/image.hpp"
#include "ricenet/model.hpp"

namespace ricenet {

struct ClassProbability {
    std::string label;
    double probability;
};

struct Prediction {
    std::vector<ClassProbability> classes;  ///< model vocabulary order
    std::string top;                        ///< first maximum
};

/// Resizes a raw decode to the model input, rescales intensities and runs the network.
Prediction classify(const Model<float>& model, const ImageTensor& raw);

/// decode_image + classify. Decoder exceptions propagate unchanged.
Prediction classify_bytes(const Model<float>& model, std::span<const std::uint8_t> bytes,
                          ImageFormat hint = ImageFormat::unknown);

/// Probability rounded to six decimal places, as printed and served.
double round6(double p);

/// One `label<TAB>probability` line per class, then `top:<TAB>label`.
std::string format_prediction(const Prediction& prediction);

}  // namespace ricenet
