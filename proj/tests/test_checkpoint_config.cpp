#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "advsyn/checkpoint.hpp"
#include "advsyn/config.hpp"
#include "testutil.hpp"

using namespace advsyn;
using testutil::TempDir;

TEST_CASE("checkpoint save/load/save is byte-identical", "[checkpoint]") {
    TempDir tmp("ckpt");
    Checkpoint ck;
    ck.meta["step"] = 42;
    ck.put_f64("lr", 0.0002);
    ck.put_rng("rng/noise", Rng(7));
    ck.tensors.emplace("w", Tensor({2, 3}, {1.5, -2.25, 0.0, 1e-300, -0.0, 3.14159}));
    ck.tensors.emplace("b", Tensor({1}, {0.125}));

    ck.save(tmp.sub("a.ckpt"));
    Checkpoint back = Checkpoint::load(tmp.sub("a.ckpt"));
    back.save(tmp.sub("b.ckpt"));

    std::ifstream fa(tmp.sub("a.ckpt"), std::ios::binary);
    std::ifstream fb(tmp.sub("b.ckpt"), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    REQUIRE(!sa.empty());
    CHECK(sa == sb);

    // payload survives bit-exactly
    CHECK(back.meta.at("step") == 42);
    CHECK(back.get_f64("lr") == 0.0002);
    const Tensor& w = back.require_tensor("w");
    CHECK(w.shape() == std::vector<int>{2, 3});
    CHECK(w[3] == 1e-300);
    Rng r = back.get_rng("rng/noise");
    CHECK(r.next_u64() == Rng(7).next_u64());
}

TEST_CASE("checkpoint begins with the magic bytes", "[checkpoint]") {
    Checkpoint ck;
    ck.meta["x"] = 1;
    const std::string buf = ck.serialize();
    REQUIRE(buf.size() > 8);
    CHECK(buf.substr(0, 8) == "ADVSYN1\n");
}

TEST_CASE("checkpoint detects corruption via the checksum", "[checkpoint]") {
    TempDir tmp("ckptbad");
    Checkpoint ck;
    ck.meta["step"] = 1;
    ck.tensors.emplace("w", Tensor({4}, {1, 2, 3, 4}));
    ck.save(tmp.sub("ok.ckpt"));

    std::ifstream in(tmp.sub("ok.ckpt"), std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    buf[buf.size() / 2] = static_cast<char>(buf[buf.size() / 2] ^ 0x40);
    std::ofstream out(tmp.sub("bad.ckpt"), std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.close();

    CHECK_THROWS_WITH(Checkpoint::load(tmp.sub("bad.ckpt")),
                      Catch::Matchers::ContainsSubstring("checksum"));

    // wrong magic and truncation are named distinctly
    std::ofstream m(tmp.sub("magic.ckpt"), std::ios::binary);
    m << "NOTMAGIC" << buf.substr(8);
    m.close();
    CHECK_THROWS_WITH(Checkpoint::load(tmp.sub("magic.ckpt")),
                      Catch::Matchers::ContainsSubstring("magic"));
    CHECK_THROWS_AS(Checkpoint::load(tmp.sub("missing.ckpt")), DataError);
}

TEST_CASE("run config defaults match the published hyperparameters", "[config]") {
    RunConfig cfg;
    CHECK(cfg.gan.z_dim == 400);
    CHECK(cfg.gan.image_size == 128);
    CHECK(cfg.gan.epochs == 10);
    CHECK(cfg.gan.steps_per_epoch == 3750);
    CHECK(cfg.gan.batch_size == 4);
    CHECK(cfg.gan.lr == 0.0002);
    CHECK(cfg.gan.beta1 == 0.5);
    CHECK(cfg.gan.beta2 == 0.999);
    CHECK(cfg.classifier.lr == 0.0005);
    CHECK(cfg.classifier.max_epochs == 200);
    CHECK(cfg.classifier.dense_units == 1024);
    CHECK(cfg.pipeline.synth_count == 400);
    CHECK(cfg.pipeline.train_fraction == 0.8);
    CHECK_FALSE(cfg.pipeline.augment_before_split);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("run config parses and overrides from json", "[config]") {
    const auto j = nlohmann::json::parse(R"({
        "seed": 9,
        "out_dir": "runs/x",
        "gan": {"image_size": 32, "z_dim": 64, "batch_size": 16},
        "classifier": {"blocks": [[1, 8], [1, 16]], "max_epochs": 5},
        "pipeline": {"synth_count": 10}
    })");
    RunConfig cfg = run_config_from_json(j);
    CHECK(cfg.seed == 9);
    CHECK(cfg.out_dir == "runs/x");
    CHECK(cfg.gan.image_size == 32);
    CHECK(cfg.gan.z_dim == 64);
    CHECK(cfg.gan.seed == 9);  // master seed propagates
    CHECK(cfg.classifier.seed == 9);
    REQUIRE(cfg.classifier.blocks.size() == 2);
    CHECK(cfg.classifier.blocks[1].second == 16);
    CHECK(cfg.pipeline.synth_count == 10);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("run config rejects unknown keys and bad types", "[config]") {
    CHECK_THROWS_WITH(run_config_from_json(nlohmann::json::parse(R"({"sede": 1})")),
                      Catch::Matchers::ContainsSubstring("sede"));
    CHECK_THROWS_WITH(
        run_config_from_json(nlohmann::json::parse(R"({"gan": {"zdim": 4}})")),
        Catch::Matchers::ContainsSubstring("gan.zdim"));
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::parse(R"({"seed": "one"})")),
                    ConfigError);
}

TEST_CASE("config validation rejects out-of-range fields", "[config]") {
    RunConfig cfg;
    cfg.gan.image_size = 48;
    CHECK_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("image_size"));

    cfg = RunConfig{};
    cfg.gan.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    cfg.classifier.lr_reduce_factor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    cfg.classifier.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    cfg.classifier.image_size = 4;  // three pools cannot fit
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    cfg.pipeline.train_fraction = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    cfg.gan.z_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("load_run_config reads a file and reports parse failures", "[config]") {
    TempDir tmp("cfg");
    {
        std::ofstream out(tmp.sub("run.json"));
        out << R"({"seed": 3, "gan": {"image_size": 64}})";
    }
    RunConfig cfg = load_run_config(tmp.sub("run.json"));
    CHECK(cfg.seed == 3);
    CHECK(cfg.gan.image_size == 64);

    {
        std::ofstream out(tmp.sub("broken.json"));
        out << "{not json";
    }
    CHECK_THROWS_AS(load_run_config(tmp.sub("broken.json")), ConfigError);
    CHECK_THROWS_AS(load_run_config(tmp.sub("missing.json")), ConfigError);
}
