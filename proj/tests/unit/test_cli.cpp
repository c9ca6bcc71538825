#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "ricenet/cli.hpp"
#include "ricenet/config.hpp"
#include "ricenet/manifest.hpp"
#include "ricenet/modelio.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace ricenet;
using namespace ricenet::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_text(const fs::path& p) {
    const auto b = read_file(p);
    return {b.begin(), b.end()};
}

/// Solid-colour PPMs: class k is pure channel k with a little per-image brightness variation.
void write_colour_tree(const fs::path& root, std::size_t per_class) {
    const std::vector<std::string> folders{"LeafBlast", "BrownSpot", "Hispa"};
    for (std::size_t k = 0; k < 3; ++k) {
        fs::create_directories(root / folders[k]);
        for (std::size_t i = 0; i < per_class; ++i) {
            ImageTensor img({3, 6, 6}, 0.05f);
            for (std::size_t p = 0; p < 36; ++p) img[k * 36 + p] = 0.6f + 0.05f * static_cast<float>(i % 5);
            write_file_atomic(root / folders[k] / (std::to_string(i) + ".ppm"), encode_ppm(img));
        }
    }
}

/// GAP -> dense(10 * identity) -> softmax: classifies solid colours perfectly.
Model<float> colour_model() {
    auto m = ModelBuilder<float>({3, 6, 6}).global_avg_pool("gap").dense("fc", 3).softmax("softmax").build(default_classes(), 1);
    auto& w = m.parameter({"fc", "weight"});
    w.fill(0.0f);
    for (std::size_t k = 0; k < 3; ++k) w.at(k, k) = 10.0f;
    return m;
}

double sum_probabilities(const std::string& block) {
    double sum = 0;
    std::istringstream in(block);
    std::string line;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos || line.starts_with("top:") || line.starts_with("image:")) continue;
        sum += std::stod(line.substr(tab + 1));
    }
    return sum;
}

}  // namespace

TEST_CASE("command-line parsing") {
    for (const std::string cmd : {"scan", "train", "eval", "predict", "augment-preview", "inspect", "serve"}) {
        const auto r = run_cli({cmd, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("--") != std::string::npos);
    }
    const auto train_help = run_cli({"train", "--help"}).out;
    for (const std::string flag : {"--config", "--preset", "--manifest", "--out", "--backbone", "--epochs",
                                   "--batch-size", "--lr", "--seed", "--image-size", "--freeze", "--augment"}) {
        CHECK(train_help.find(flag) != std::string::npos);
    }
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"scan", "--bogus"}).code == 2);
    CHECK(run_cli({"inspect", "--model", "x", "--unknown-flag", "1"}).code == 2);
}

TEST_CASE("config documents") {
    TempDir dir;
    SUBCASE("comments and relative paths") {
        const auto doc = parse_config_text(R"({
            // training setup
            "preset": "paper-iter2",
            "data": {"manifest": "data/m.tsv"},  /* relative to the file */
            "model": {"out": "/abs/model.rdn1"},
            "train": {"epochs": 3}
        })",
                                           dir.path());
        const auto c = resolve_config(doc);
        CHECK(*c.manifest == dir.path() / "data" / "m.tsv");
        CHECK(*c.out == "/abs/model.rdn1");
        CHECK(c.train.epochs == 3);
        CHECK(c.train.freeze_policy == std::vector<std::string>{"base."});
        CHECK(c.preset == "paper-iter2");
    }
    SUBCASE("all problems reported together") {
        try {
            parse_config_text(R"({"epochz": 1, "train": {"epochs": "ten", "lr": 1}, "data": 5})", dir.path());
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("'epochz'") != std::string::npos);
            CHECK(msg.find("'train.epochs'") != std::string::npos);
            CHECK(msg.find("'train.lr'") != std::string::npos);
            CHECK(msg.find("'data'") != std::string::npos);
        }
        CHECK_THROWS_AS(parse_config_text("{not json", dir.path()), ConfigError);
        CHECK_THROWS_AS(resolve_config(nlohmann::json{{"preset", "iter9"}}), ConfigError);
        CHECK_THROWS_AS(resolve_config(nlohmann::json{{"train", {{"epochs", 0}}}}), ConfigError);
        CHECK_THROWS_AS(resolve_config(nlohmann::json{{"data", {{"split_fraction", 1.5}}}}), ConfigError);
    }
    SUBCASE("flags override file override preset") {
        nlohmann::json doc = {{"preset", "paper-iter3"}, {"train", {{"epochs", 5}}}, {"seed", 7}};
        doc.merge_patch({{"train", {{"epochs", 2}}}});
        const auto c = resolve_config(doc);
        CHECK(c.train.epochs == 2);
        CHECK(c.train.augmentation_enabled);
        CHECK(c.train.seed == 7);
        CHECK(c.train.augmentation.seed == 7);
    }
    SUBCASE("echo round trip") {
        const auto c = resolve_config(nlohmann::json{{"preset", "paper-iter1"}, {"data", {{"manifest", "/m.tsv"}}}});
        const auto back = resolve_config(nlohmann::json::parse(echo_config(c)));
        CHECK(back.train == c.train);
        CHECK(back.manifest == c.manifest);
        CHECK(echo_config(back) == echo_config(c));
    }
    SUBCASE("missing keys") {
        const CliConfig c;
        CHECK(missing_keys(c, {"data.manifest", "model.out"}) == std::vector<std::string>{"data.manifest", "model.out"});
    }
}

TEST_CASE("scan") {
    TempDir dir;
    SUBCASE("1,260 files") {
        for (const std::string folder : {"LeafBlast", "BrownSpot", "Hispa"}) {
            fs::create_directories(dir / "kaggle" / folder);
            const auto bytes = encode_ppm(ImageTensor({3, 2, 2}, 0.5f));
            for (int i = 0; i < 420; ++i) write_file_atomic(dir / "kaggle" / folder / (std::to_string(i) + ".ppm"), bytes);
        }
        const auto r = run_cli({"scan", "--data-dir", (dir / "kaggle").string(), "--out", (dir / "m.tsv").string()});
        CHECK(r.code == 0);
        CHECK(r.out.find("leaf_blast: 420") != std::string::npos);
        CHECK(r.out.find("brown_spot: 420") != std::string::npos);
        CHECK(r.out.find("hispa: 420") != std::string::npos);
        CHECK(r.out.find("total: 1260") != std::string::npos);
        const auto m = read_manifest(dir / "m.tsv", dir / "m.tsv.classes");
        CHECK(m.records.size() == 1260);
        CHECK(split_dataset(m, 0.8, 3).indices(Split::train).size() == 1008);
    }
    SUBCASE("empty directory") {
        fs::create_directories(dir / "empty");
        const auto r = run_cli({"scan", "--data-dir", (dir / "empty").string(), "--out", (dir / "m.tsv").string()});
        CHECK(r.code != 0);
        CHECK_FALSE(r.err.empty());
        CHECK_FALSE(fs::exists(dir / "m.tsv"));
    }
    SUBCASE("missing class folder and stray files") {
        write_blob_tree(dir / "tree", {"LeafBlast", "Hispa"}, 3, 8, 1);
        write_file_atomic(dir / "tree" / "Hispa" / "readme.txt", std::string_view("x"));
        const auto r = run_cli({"scan", "--data-dir", (dir / "tree").string(), "--out", (dir / "m.tsv").string()});
        CHECK(r.code == 0);
        CHECK(r.err.find("brown_spot") != std::string::npos);
        CHECK(r.out.find("skipped non-image files: 1") != std::string::npos);
        CHECK(read_text(dir / "m.tsv.classes") == "leaf_blast\nhispa\n");
    }
}

TEST_CASE("train, eval, predict, inspect") {
    TempDir dir;
    write_blob_tree(dir / "tree", {"LeafBlast", "BrownSpot", "Hispa"}, 5, 20, 2);
    REQUIRE(run_cli({"scan", "--data-dir", (dir / "tree").string(), "--out", (dir / "m.tsv").string()}).code == 0);
    const std::vector<std::string> base{"train",        "--manifest", (dir / "m.tsv").string(), "--epochs", "2",
                                        "--image-size", "16",         "--batch-size",           "4",        "--seed",
                                        "5"};

    SUBCASE("missing manifest leaves no outputs") {
        const auto r = run_cli({"train", "--manifest", (dir / "nope.tsv").string(), "--out", (dir / "o.rdn1").string()});
        CHECK(r.code == 2);
        CHECK_FALSE(fs::exists(dir / "o.rdn1"));
        CHECK_FALSE(fs::exists(dir / "o.rdn1.history.tsv"));
    }
    SUBCASE("missing required settings are listed together") {
        const auto r = run_cli({"train"});
        CHECK(r.code == 2);
        CHECK(r.err.find("data.manifest") != std::string::npos);
        CHECK(r.err.find("model.out") != std::string::npos);
    }
    SUBCASE("config file errors exit 2") {
        write_file_atomic(dir / "bad.json", std::string_view(R"({"trian": {}})"));
        const auto r = run_cli({"train", "--config", (dir / "bad.json").string()});
        CHECK(r.code == 2);
        CHECK(r.err.find("trian") != std::string::npos);
        CHECK(run_cli({"train", "--preset", "iter9", "--manifest", "m", "--out", "o"}).code == 2);
        CHECK(run_cli({"train", "--config", (dir / "absent.json").string()}).code == 2);
    }
    SUBCASE("a full run is deterministic and writes every artifact") {
        auto args = base;
        args.insert(args.end(), {"--out", (dir / "a.rdn1").string()});
        const auto r1 = run_cli(args);
        REQUIRE(r1.code == 0);
        CHECK(r1.out.find("effective config:") != std::string::npos);
        CHECK(std::regex_search(r1.out, std::regex(R"(Result= \d+\.\d% trained data set, \d+\.\d% validation)")));
        CHECK(fs::exists(dir / "a.rdn1.history.tsv"));
        const auto split = read_manifest(dir / "a.rdn1.manifest.tsv", dir / "a.rdn1.manifest.tsv.classes");
        CHECK(split.is_split());
        CHECK(split.indices(Split::train).size() == 12);
        CHECK(split.split_seed == 5u);
        const auto history = read_text(dir / "a.rdn1.history.tsv");
        CHECK(std::count(history.begin(), history.end(), '\n') == 4);

        const auto model_bytes = read_file(dir / "a.rdn1");
        args.back() = (dir / "b.rdn1").string();
        REQUIRE(run_cli(args).code == 0);
        CHECK(read_file(dir / "b.rdn1") == model_bytes);
        CHECK(read_text(dir / "b.rdn1.history.tsv") == history);

        const auto e1 = run_cli({"eval", "--model", (dir / "a.rdn1").string(), "--manifest",
                                 (dir / "a.rdn1.manifest.tsv").string()});
        REQUIRE(e1.code == 0);
        CHECK(e1.out.find("accuracy\t") != std::string::npos);
        CHECK(e1.out.find("confusion") != std::string::npos);
        const auto e2 = run_cli({"eval", "--model", (dir / "a.rdn1").string(), "--manifest",
                                 (dir / "a.rdn1.manifest.tsv").string()});
        CHECK(e1.out == e2.out);
        CHECK(run_cli({"eval", "--model", (dir / "a.rdn1").string(), "--manifest", (dir / "m.tsv").string()}).code == 2);

        const auto info = run_cli({"inspect", "--model", (dir / "a.rdn1").string()});
        CHECK(info.code == 0);
        CHECK(info.out.find("base.conv1\tconv2d") != std::string::npos);
        CHECK(info.out.find("meta.seed\t5") != std::string::npos);
        CHECK(info.out.find("input_shape\t[3, 16, 16]") != std::string::npos);
    }
    SUBCASE("transfer from a backbone with a frozen-backbone preset") {
        const auto backbone = cli::default_architecture(16, 16, {"p", "q", "r", "s"}, 77);
        save_model_file(backbone, dir / "backbone.rdn1");
        auto args = base;
        args.insert(args.end(), {"--preset", "paper-iter2", "--backbone", (dir / "backbone.rdn1").string(), "--out",
                                 (dir / "t.rdn1").string()});
        const auto r = run_cli(args);
        REQUIRE(r.code == 0);
        CHECK(r.out.find("\"epochs\": 2") != std::string::npos);
        const auto m = load_model_file(dir / "t.rdn1");
        CHECK(m.class_labels() == default_classes());
        for (const auto& l : m.layers()) CHECK(l.frozen == l.name.starts_with("base."));
        for (const auto& k : backbone.all_parameters()) {
            if (k.layer.starts_with("base.")) CHECK(bit_identical(backbone.parameter(k), m.parameter(k)));
        }
        CHECK(m.metadata().at("preset") == "paper-iter2");
    }
    SUBCASE("predict") {
        const auto model = dir / "c.rdn1";
        save_model_file(cli::default_architecture(16, 16, default_classes(), 3), model);
        const auto img = (dir / "tree" / "Hispa" / "1.png").string();
        const auto r = run_cli({"predict", "--model", model.string(), img, img});
        REQUIRE(r.code == 0);
        const auto first = r.out.substr(0, r.out.size() / 2), second = r.out.substr(r.out.size() / 2);
        CHECK(first == second);
        CHECK(std::abs(sum_probabilities(first) - 1.0) <= 1e-4);
        CHECK(std::regex_search(first, std::regex("leaf_blast\t\\d\\.\\d{6}\nbrown_spot\t\\d\\.\\d{6}\nhispa\t\\d\\.\\d{6}\ntop:\t")));

        write_file_atomic(dir / "broken.png", std::string_view("\x89PNG\r\n\x1a\n garbage"));
        const auto bad = run_cli({"predict", "--model", model.string(), img, (dir / "broken.png").string(), img});
        CHECK(bad.code == 4);
        CHECK(std::count(bad.out.begin(), bad.out.end(), '\n') == 10);
        CHECK(bad.err.find("broken.png") != std::string::npos);
        CHECK(run_cli({"predict", "--model", (dir / "none.rdn1").string(), img}).code == 4);
    }
}

TEST_CASE("eval of a perfect model") {
    TempDir dir;
    write_colour_tree(dir / "tree", 4);
    REQUIRE(run_cli({"scan", "--data-dir", (dir / "tree").string(), "--out", (dir / "m.tsv").string()}).code == 0);
    auto m = read_manifest(dir / "m.tsv", dir / "m.tsv.classes");
    write_manifest(split_dataset(m, 0.5, 1), dir / "s.tsv", dir / "s.tsv.classes");
    save_model_file(colour_model(), dir / "colour.rdn1");
    const auto r = run_cli({"eval", "--model", (dir / "colour.rdn1").string(), "--manifest", (dir / "s.tsv").string(),
                            "--split", "all"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("accuracy\t1.000000") != std::string::npos);
    CHECK(r.out.find("leaf_blast\t4\t0\t0\nbrown_spot\t0\t4\t0\nhispa\t0\t0\t4\n") != std::string::npos);
    const auto v = run_cli({"eval", "--model", (dir / "colour.rdn1").string(), "--manifest", (dir / "s.tsv").string()});
    CHECK(v.out.find("leaf_blast\t2\t0\t0\nbrown_spot\t0\t2\t0\nhispa\t0\t0\t2\n") != std::string::npos);
}

TEST_CASE("augment-preview") {
    TempDir dir;
    write_blob_tree(dir / "tree", {"LeafBlast", "BrownSpot", "Hispa"}, 2, 12, 4);
    REQUIRE(run_cli({"scan", "--data-dir", (dir / "tree").string(), "--out", (dir / "m.tsv").string()}).code == 0);
    auto preview = [&](const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> args{"augment-preview", "--manifest", (dir / "m.tsv").string(), "--out-dir",
                                      (dir / out).string(), "--image-size", "10", "--seed", "9"};
        args.insert(args.end(), extra.begin(), extra.end());
        return run_cli(args);
    };
    REQUIRE(preview("a", {"-n", "4"}).code == 0);
    REQUIRE(preview("b", {"-n", "4"}).code == 0);
    for (int i = 0; i < 4; ++i) {
        const auto name = fmt::format("preview_{:03}.ppm", i);
        CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));
    }
    CHECK_FALSE(fs::exists(dir / "a" / "preview_004.ppm"));

    REQUIRE(preview("plain", {"-n", "3", "--no-flip", "--no-shear"}).code == 0);
    const auto m = read_manifest(dir / "m.tsv", dir / "m.tsv.classes");
    for (int i = 0; i < 3; ++i) {
        const auto expected = encode_ppm(preprocess(load_image(dir / m.records[static_cast<std::size_t>(i)].path), 10, 10));
        CHECK(read_file(dir / "plain" / fmt::format("preview_{:03}.ppm", i)) == expected);
    }

    const auto none = preview("none", {"-n", "0"});
    CHECK(none.code == 0);
    CHECK((!fs::exists(dir / "none") || fs::is_empty(dir / "none")));
}
