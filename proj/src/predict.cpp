#include "ricenet/predict.hpp"

#include <cmath>

#include <fmt/format.h>

namespace ricenet {

Prediction classify(const Model<float>& model, const ImageTensor& raw) {
    const auto& in = model.input_shape();
    if (raw.rank() != 3 || raw.dim(0) != in[0]) {
        throw ShapeError(fmt::format("image {} does not match model input channels {}", format_shape(raw.shape()), in[0]));
    }
    const auto x = preprocess(raw, in[1], in[2]);
    const auto probs = model_predict(model, x.reshape({1, in[0], in[1], in[2]}));
    Prediction p;
    std::size_t best = 0;
    for (std::size_t k = 0; k < model.num_classes(); ++k) {
        p.classes.push_back({model.class_labels()[k], static_cast<double>(probs[k])});
        if (probs[k] > probs[best]) best = k;
    }
    p.top = model.class_labels()[best];
    return p;
}

Prediction classify_bytes(const Model<float>& model, std::span<const std::uint8_t> bytes, ImageFormat hint) {
    return classify(model, decode_image(bytes, hint));
}

double round6(double p) { return std::round(p * 1e6) / 1e6; }

std::string format_prediction(const Prediction& prediction) {
    std::string out;
    for (const auto& c : prediction.classes) out += fmt::format("{}\t{:.6f}\n", c.label, c.probability);
    out += fmt::format("top:\t{}\n", prediction.top);
    return out;
}

}  // namespace ricenet
