#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "gradcheck.hpp"
#include "json.hpp"
#include "modelfile.hpp"
#include "ricenet/modelio.hpp"
#include "ricenet/train.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace ricenet;
using namespace ricenet::testing;

namespace {

Model<float> toy(std::uint64_t seed) {
    auto m = ModelBuilder<float>({3, 8, 8})
                 .conv2d("conv1", 4, 3)
                 .relu("relu1")
                 .maxpool("pool1")
                 .conv2d("conv2", 8, 3, 1, Padding::valid)
                 .relu("relu2")
                 .flatten("flatten")
                 .dense("fc", 3)
                 .softmax("softmax")
                 .build({"leaf_blast", "brown_spot", "hispa"}, seed);
    m.metadata()["trained_by"] = "unit test";
    return m;
}

ParsedModelFile parse(const std::vector<std::uint8_t>& bytes) { return parse_model_file(bytes); }

std::vector<std::uint8_t> rebuild(const nlohmann::json& manifest, std::span<const std::uint8_t> blob) {
    return rebuild_model_file(manifest, blob);
}

void check_same_parameters(const Model<float>& a, const Model<float>& b) {
    REQUIRE(a.all_parameters() == b.all_parameters());
    for (const auto& k : a.all_parameters()) CHECK(bit_identical(a.parameter(k), b.parameter(k)));
}

}  // namespace

TEST_CASE("save and load round trip") {
    const auto m = toy(1);
    const auto bytes = save_model(m);
    const auto loaded = load_model(bytes);
    check_same_parameters(m, loaded);
    CHECK(loaded.metadata() == m.metadata());
    CHECK(loaded.class_labels() == m.class_labels());
    CHECK(loaded.input_shape() == m.input_shape());
    for (std::size_t i = 0; i < m.layers().size(); ++i) {
        CHECK(loaded.layer(i).name == m.layer(i).name);
        CHECK(loaded.layer(i).kind == m.layer(i).kind);
        CHECK(loaded.layer(i).spec == m.layer(i).spec);
        CHECK(loaded.layer(i).frozen == m.layer(i).frozen);
    }
    CHECK(save_model(m) == bytes);
    CHECK(save_model(loaded) == bytes);

    Rng rng(2);
    const auto x = random_tensor<float>({2, 3, 8, 8}, rng, 0, 1);
    CHECK(bit_identical(model_predict(m, x), model_predict(loaded, x)));
}

TEST_CASE("round trip over random architectures keeps frozen flags and parameters") {
    Rng rng(3);
    for (int trial = 0; trial < 15; ++trial) {
        const std::size_t classes = 2 + rng.below(3);
        std::vector<std::string> labels;
        for (std::size_t i = 0; i < classes; ++i) labels.push_back("class" + std::to_string(i));
        const std::size_t size = 4 + rng.below(8);
        auto m = ModelBuilder<float>({1 + rng.below(3), size, size})
                     .conv2d("c1", 1 + rng.below(5), 1 + rng.below(3), 1 + rng.below(2),
                             rng.bernoulli(0.5) ? Padding::same : Padding::valid)
                     .relu("r1")
                     .global_avg_pool("gap")
                     .dense("fc", classes)
                     .softmax("sm")
                     .build(labels, rng.next());
        m.set_frozen(0, rng.bernoulli(0.5));
        const auto back = load_model(save_model(m));
        check_same_parameters(m, back);
        CHECK(back.layer(0).frozen == m.layer(0).frozen);
        CHECK(save_model(back) == save_model(m));
    }
}

TEST_CASE("file layout") {
    const auto m = toy(4);
    const auto bytes = save_model(m);
    CHECK(std::memcmp(bytes.data(), "RDN1", 4) == 0);
    const auto [manifest, blob_start] = parse(bytes);
    CHECK(manifest["format_version"] == 1);
    std::vector<std::string> names;
    for (const auto& l : manifest["layers"]) names.push_back(l["name"]);
    CHECK(names == std::vector<std::string>{"conv1", "relu1", "pool1", "conv2", "relu2", "flatten", "fc", "softmax"});
    CHECK(blob_start % 16 == 0);
    // Spot-check one value against an independent little-endian decode.
    const auto& p = manifest["layers"][6]["params"][0];
    CHECK(p["name"] == "weight");
    const std::size_t off = p["offset"];
    CHECK(off % 16 == 0);
    const std::uint8_t* raw = bytes.data() + blob_start + off + 4 * 5;
    const std::uint32_t bits = raw[0] | raw[1] << 8 | raw[2] << 16 | static_cast<std::uint32_t>(raw[3]) << 24;
    float v;
    std::memcpy(&v, &bits, 4);
    CHECK(v == m.parameter({"fc", "weight"})[5]);
    std::size_t last_end = 0;
    for (const auto& l : manifest["layers"])
        for (const auto& q : l["params"]) last_end = std::max<std::size_t>(last_end, q["offset"].get<std::size_t>() + q["length"].get<std::size_t>());
    CHECK(bytes.size() == blob_start + last_end);
}

TEST_CASE("malformed files give typed errors") {
    const auto bytes = save_model(toy(5));
    const auto [manifest, blob_start] = parse(bytes);
    const std::span<const std::uint8_t> blob(bytes.data() + blob_start, bytes.size() - blob_start);

    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        CHECK_THROWS_AS(load_model(b), FormatError);
        CHECK_THROWS_AS(load_model(std::vector<std::uint8_t>{}), FormatError);
        CHECK_THROWS_AS(load_model(std::vector<std::uint8_t>{'R', 'D', 'N'}), FormatError);
    }
    SUBCASE("truncation names the last tensor") {
        auto b = bytes;
        b.resize(b.size() - 4);
        try {
            load_model(b);
            FAIL("expected CorruptionError");
        } catch (const CorruptionError& e) {
            CHECK(e.field() == "fc/bias");
        }
        b.resize(20);
        CHECK_THROWS_AS(load_model(b), CorruptionError);
    }
    SUBCASE("trailing bytes") {
        auto b = bytes;
        b.push_back(0);
        CHECK_THROWS_AS(load_model(b), CorruptionError);
    }
    SUBCASE("bad offset") {
        auto m = manifest;
        m["layers"][0]["params"][1]["offset"] = 1 << 30;
        try {
            load_model(rebuild(m, blob));
            FAIL("expected CorruptionError");
        } catch (const CorruptionError& e) {
            CHECK(e.field() == "conv1/bias");
        }
        m = manifest;
        m["layers"][0]["params"][1]["offset"] = m["layers"][0]["params"][1]["offset"].get<std::size_t>() + 4;
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), CorruptionError);
    }
    SUBCASE("shape mismatch") {
        auto m = manifest;
        m["layers"][3]["params"][0]["shape"] = {8, 4, 3, 2};
        try {
            load_model(rebuild(m, blob));
            FAIL("expected CorruptionError");
        } catch (const CorruptionError& e) {
            CHECK(e.field() == "conv2/kernel");
        }
        m = manifest;
        m["layers"][6]["params"][1]["length"] = 8;
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), CorruptionError);
        m = manifest;
        m["input_shape"] = {3, 12, 12};
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), CorruptionError);
    }
    SUBCASE("manifest damage") {
        auto b = bytes;
        b[8] = '[';
        CHECK_THROWS_AS(load_model(b), FormatError);
        auto m = manifest;
        m["format_version"] = 2;
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), FormatError);
        m = manifest;
        m["layers"][0].erase("kind");
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), FormatError);
        m = manifest;
        m["layers"][0]["kind"] = "attention";
        CHECK_THROWS_AS(load_model(rebuild(m, blob)), FormatError);
        b = bytes;
        b[4] = 0xFF;
        b[5] = 0xFF;
        b[6] = 0xFF;
        CHECK_THROWS_AS(load_model(b), CorruptionError);
    }
    SUBCASE("random byte flips never crash") {
        Rng rng(6);
        for (int trial = 0; trial < 300; ++trial) {
            auto b = bytes;
            const std::size_t flips = 1 + rng.below(4);
            for (std::size_t f = 0; f < flips; ++f) b[rng.below(blob_start)] ^= static_cast<std::uint8_t>(1 + rng.below(255));
            if (rng.bernoulli(0.3)) b.resize(rng.below(b.size()));
            try {
                const auto m = load_model(b);
                CHECK(m.num_classes() >= 1);
            } catch (const ModelFileError&) {
            }
        }
    }
}

TEST_CASE("file helpers") {
    TempDir dir;
    const auto m = toy(7);
    save_model_file(m, dir / "m.rdn1");
    check_same_parameters(m, load_model_file(dir / "m.rdn1"));
    CHECK_THROWS_AS(load_model_file(dir / "missing.rdn1"), IoError);
    CHECK(model_id(save_model(m)) == model_id(read_file(dir / "m.rdn1")));
    CHECK(model_id(save_model(m)).size() == 16);
    CHECK(model_id(save_model(m)) != model_id(save_model(toy(8))));
    CHECK(model_id(std::vector<std::uint8_t>{}) == "cbf29ce484222325");
    CHECK(model_id(std::vector<std::uint8_t>{'a'}) == "af63dc4c8601ec8c");
}

TEST_CASE("attach_head") {
    const auto backbone = toy(9);
    const HeadSpec head{{"leaf_blast", "brown_spot", "hispa"}};

    SUBCASE("cut point, naming and shapes") {
        const auto m = attach_head(backbone, head, true, 10);
        std::vector<std::string> names;
        for (const auto& l : m.layers()) names.push_back(l.name);
        CHECK(names == std::vector<std::string>{"base.conv1", "base.relu1", "base.pool1", "base.conv2", "base.relu2",
                                                "head.gap", "head.fc", "head.softmax"});
        CHECK(m.parameter({"head.fc", "weight"}).shape() == Shape{8, 3});
        CHECK(m.output_shapes().back() == Shape{3});
        for (const auto& l : m.layers()) CHECK(l.frozen == l.name.starts_with("base."));
        CHECK(bit_identical(m.parameter({"base.conv1", "kernel"}), backbone.parameter({"conv1", "kernel"})));
        CHECK(bit_identical(m.parameter({"base.conv2", "bias"}), backbone.parameter({"conv2", "bias"})));
        CHECK(m.class_labels() == head.class_labels);
    }
    SUBCASE("unfrozen") {
        const auto m = attach_head(backbone, head, false, 10);
        for (const auto& l : m.layers()) CHECK_FALSE(l.frozen);
    }
    SUBCASE("head init is seeded") {
        const auto a = attach_head(backbone, head, true, 10), b = attach_head(backbone, head, true, 10),
                   c = attach_head(backbone, head, true, 11);
        CHECK(bit_identical(a.parameter({"head.fc", "weight"}), b.parameter({"head.fc", "weight"})));
        CHECK_FALSE(bit_identical(a.parameter({"head.fc", "weight"}), c.parameter({"head.fc", "weight"})));
    }
    SUBCASE("re-attaching does not double the prefix") {
        const auto once = attach_head(backbone, head, true, 10);
        const auto twice = attach_head(once, HeadSpec{{"p", "q"}}, false, 12);
        CHECK(twice.layer(0).name == "base.conv1");
        CHECK(twice.num_classes() == 2);
    }
    SUBCASE("errors") {
        const auto flat = ModelBuilder<float>({3, 4, 4}).flatten("f").dense("fc", 3).softmax("s").build({"a", "b", "c"}, 1);
        CHECK_THROWS_AS(attach_head(flat, head, true, 1), StructureError);
        CHECK_THROWS_AS(attach_head(backbone, HeadSpec{{"a"}}, true, 1), ConfigError);
        CHECK_THROWS_AS(attach_head(backbone, HeadSpec{{"a", "a"}}, true, 1), ConfigError);
    }
    SUBCASE("training a frozen transfer model only moves head tensors") {
        auto m = attach_head(backbone, head, true, 13);
        const auto before = save_model(m);
        const auto set = make_blob_set({Blob::circle, Blob::square, Blob::cross}, 3, 8, cool_palette(), 14).dataset(3);
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.batch_size = 3;
        train(m, set, set, cfg);
        const auto b0 = load_model(before);
        for (const auto& k : m.all_parameters()) {
            if (k.layer.starts_with("base."))
                CHECK(bit_identical(m.parameter(k), b0.parameter(k)));
            else
                CHECK_FALSE(bit_identical(m.parameter(k), b0.parameter(k)));
        }
    }
}
