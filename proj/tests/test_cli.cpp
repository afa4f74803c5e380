#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "testutil.hpp"

using testutil::read_file;
using testutil::run_process;
using testutil::RunResult;
using testutil::TempDir;

namespace {

const std::string kCli = ADVSYN_CLI_PATH;

std::string q(const std::string& s) { return "'" + s + "'"; }

size_t count_files(const std::string& dir, const std::string& ext) {
    namespace fs = std::filesystem;
    size_t n = 0;
    if (!fs::exists(dir)) return 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ext) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("every subcommand's --help exits 0 and documents its flags", "[cli]") {
    struct Case {
        std::string sub, flag;
        bool has_defaults;
    };
    const std::vector<Case> cases{
        {"", "--seed", true},
        {"phantom", "--n-yes", true},
        {"preprocess", "--size", true},
        {"train-gan", "--steps-per-epoch", true},
        {"generate", "--ckpt", true},
        {"train-clf", "--synth-count", true},
        {"evaluate", "--data", false},  // both flags required, no defaults
        {"compare-dist", "--bins", true},
    };
    for (const auto& c : cases) {
        RunResult r = run_process(kCli + " " + c.sub + " --help");
        INFO(c.sub << ": " << r.output);
        REQUIRE(r.exit_code == 0);
        REQUIRE(r.output.find(c.flag) != std::string::npos);
        if (c.has_defaults) {
            // rendered either as "(default N)" prose or a "[N]" capture
            const bool documented = r.output.find("default") != std::string::npos ||
                                    r.output.find('[') != std::string::npos;
            REQUIRE(documented);
        }
    }
}

TEST_CASE("phantom writes the expected tree deterministically", "[cli]") {
    TempDir tmp("cliphantom");
    const std::string cmd = kCli + " --seed 11 --out " + q(tmp.sub("a")) +
                            " phantom --n-yes 5 --n-no 3 --size 32";
    RunResult r1 = run_process(cmd);
    INFO(r1.output);
    REQUIRE(r1.exit_code == 0);
    CHECK(count_files(tmp.sub("a"), ".pgm") == 8);
    CHECK(std::filesystem::exists(tmp.sub("a/manifest.csv")));

    // same seed reproduces identical bytes
    RunResult r2 = run_process(kCli + " --seed 11 --out " + q(tmp.sub("b")) +
                               " phantom --n-yes 5 --n-no 3 --size 32");
    REQUIRE(r2.exit_code == 0);
    CHECK(read_file(tmp.sub("a/yes/yes_000002.pgm")) == read_file(tmp.sub("b/yes/yes_000002.pgm")));
    CHECK(read_file(tmp.sub("a/manifest.csv")) == read_file(tmp.sub("b/manifest.csv")));

    // zero counts still write a manifest
    RunResult r3 = run_process(kCli + " --out " + q(tmp.sub("c")) + " phantom --n-yes 0 --n-no 0");
    REQUIRE(r3.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.sub("c/manifest.csv")));
    CHECK(count_files(tmp.sub("c"), ".pgm") == 0);
}

TEST_CASE("preprocess resizes a tree in place", "[cli]") {
    TempDir tmp("clipre");
    REQUIRE(run_process(kCli + " --seed 3 --out " + q(tmp.sub("src")) +
                        " phantom --n-yes 2 --n-no 2 --size 32")
                .exit_code == 0);
    RunResult r = run_process(kCli + " --out " + q(tmp.sub("dst")) + " preprocess --in " +
                              q(tmp.sub("src")) + " --size 16");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(count_files(tmp.sub("dst"), ".pgm") == 4);
    // spot-check one header for the new dimensions
    const std::string pgm = read_file(tmp.sub("dst/yes/yes_000000.pgm"));
    CHECK(pgm.rfind("P5\n16 16\n255\n", 0) == 0);
}

TEST_CASE("cli maps error classes onto exit codes", "[cli]") {
    TempDir tmp("clierr");
    // missing data root -> data error (3), before any training
    RunResult r = run_process(kCli + " --out " + q(tmp.sub("o")) + " train-gan --data " +
                              q(tmp.sub("nope")));
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("data error") != std::string::npos);

    // invalid config value -> 2
    RunResult r2 = run_process(kCli + " --out " + q(tmp.sub("o2")) + " train-gan --data " +
                               q(tmp.sub("nope")) + " --image-size 48");
    CHECK(r2.exit_code == 2);

    // malformed config file -> 2
    {
        std::ofstream bad(tmp.sub("bad.json"));
        bad << "{broken";
    }
    RunResult r3 = run_process(kCli + " --config " + q(tmp.sub("bad.json")) + " phantom");
    CHECK(r3.exit_code == 2);

    // unknown flag -> 2
    RunResult r4 = run_process(kCli + " phantom --does-not-exist 1");
    CHECK(r4.exit_code == 2);

    // corrupted checkpoint -> 3 with a checksum diagnostic
    REQUIRE(run_process(kCli + " --seed 5 --out " + q(tmp.sub("d")) +
                        " phantom --n-yes 6 --n-no 0 --size 32")
                .exit_code == 0);
    REQUIRE(run_process(kCli + " --seed 5 --out " + q(tmp.sub("g")) + " train-gan --data " +
                        q(tmp.sub("d")) +
                        " --image-size 32 --z-dim 8 --epochs 1 --steps-per-epoch 2 "
                        "--batch-size 2 --sample-every 0")
                .exit_code == 0);
    std::string ckpt = read_file(tmp.sub("g/gan_epoch_1.ckpt"));
    ckpt[ckpt.size() / 3] = static_cast<char>(ckpt[ckpt.size() / 3] ^ 0x11);
    {
        std::ofstream out(tmp.sub("g/corrupt.ckpt"), std::ios::binary);
        out.write(ckpt.data(), static_cast<std::streamsize>(ckpt.size()));
    }
    RunResult r5 = run_process(kCli + " --out " + q(tmp.sub("s")) + " generate --ckpt " +
                               q(tmp.sub("g/corrupt.ckpt")) + " --n 2");
    CHECK(r5.exit_code == 3);
    CHECK(r5.output.find("checksum") != std::string::npos);
}

TEST_CASE("config file drives a run and flags override it", "[cli]") {
    TempDir tmp("clicfg");
    {
        std::ofstream cfg(tmp.sub("run.json"));
        cfg << R"({"seed": 21, "out_dir": ")" << tmp.sub("from_cfg") << R"("})";
    }
    RunResult r = run_process(kCli + " --config " + q(tmp.sub("run.json")) +
                              " phantom --n-yes 2 --n-no 1 --size 32");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(count_files(tmp.sub("from_cfg"), ".pgm") == 3);

    // --out beats the config file
    RunResult r2 = run_process(kCli + " --config " + q(tmp.sub("run.json")) + " --out " +
                               q(tmp.sub("explicit")) + " phantom --n-yes 1 --n-no 1 --size 32");
    REQUIRE(r2.exit_code == 0);
    CHECK(count_files(tmp.sub("explicit"), ".pgm") == 2);
}

TEST_CASE("mini pipeline: train-gan, generate, train-clf, evaluate, compare-dist", "[cli][slowish]") {
    TempDir tmp("clipipe");
    const std::string data = tmp.sub("data");
    REQUIRE(run_process(kCli + " --seed 31 --out " + q(data) +
                        " phantom --n-yes 24 --n-no 24 --size 32")
                .exit_code == 0);

    RunResult gan = run_process(kCli + " --seed 31 --out " + q(tmp.sub("gan")) + " train-gan " +
                                "--data " + q(data) +
                                " --image-size 32 --z-dim 8 --epochs 2 --steps-per-epoch 3 "
                                "--batch-size 4 --sample-every 2");
    INFO(gan.output);
    REQUIRE(gan.exit_code == 0);
    REQUIRE(std::filesystem::exists(tmp.sub("gan/gan_epoch_2.ckpt")));
    REQUIRE(std::filesystem::exists(tmp.sub("gan/samples_step_2.pgm")));
    const std::string loss_csv = read_file(tmp.sub("gan/gan_loss.csv"));
    CHECK(loss_csv.rfind("step,d_loss,g_loss\n", 0) == 0);
    CHECK(std::count(loss_csv.begin(), loss_csv.end(), '\n') == 7);  // header + 6 steps

    RunResult gen = run_process(kCli + " --seed 32 --out " + q(tmp.sub("synth")) +
                                " generate --ckpt " + q(tmp.sub("gan/gan_epoch_2.ckpt")) +
                                " --n 10");
    INFO(gen.output);
    REQUIRE(gen.exit_code == 0);
    CHECK(count_files(tmp.sub("synth"), ".pgm") == 10);
    const std::string manifest = read_file(tmp.sub("synth/manifest.csv"));
    CHECK(manifest.find("synthetic") != std::string::npos);

    // generation is reproducible checkpoint+seed -> bytes
    REQUIRE(run_process(kCli + " --seed 32 --out " + q(tmp.sub("synth2")) + " generate --ckpt " +
                        q(tmp.sub("gan/gan_epoch_2.ckpt")) + " --n 10")
                .exit_code == 0);
    CHECK(read_file(tmp.sub("synth/yes/yes_000003.pgm")) ==
          read_file(tmp.sub("synth2/yes/yes_000003.pgm")));

    RunResult clf = run_process(kCli + " --seed 31 --out " + q(tmp.sub("clf")) + " train-clf " +
                                "--data " + q(data) + " --synth " + q(tmp.sub("synth")) +
                                " --synth-count 10 --image-size 32 --max-epochs 2 --batch-size 8");
    INFO(clf.output);
    REQUIRE(clf.exit_code == 0);
    REQUIRE(std::filesystem::exists(tmp.sub("clf/clf_best.ckpt")));
    REQUIRE(std::filesystem::exists(tmp.sub("clf/train_report.csv")));
    REQUIRE(std::filesystem::exists(tmp.sub("clf/test_split/manifest.csv")));

    RunResult ev = run_process(kCli + " --out " + q(tmp.sub("eval")) + " evaluate --ckpt " +
                               q(tmp.sub("clf/clf_best.ckpt")) + " --data " +
                               q(tmp.sub("clf/test_split")));
    INFO(ev.output);
    REQUIRE(ev.exit_code == 0);
    const std::string report = read_file(tmp.sub("eval/report.csv"));
    CHECK(report.rfind("class,precision,recall,f1,support\n", 0) == 0);
    CHECK(std::filesystem::exists(tmp.sub("eval/confusion.csv")));

    // evaluation is deterministic across repeat invocations
    REQUIRE(run_process(kCli + " --out " + q(tmp.sub("eval2")) + " evaluate --ckpt " +
                        q(tmp.sub("clf/clf_best.ckpt")) + " --data " +
                        q(tmp.sub("clf/test_split")))
                .exit_code == 0);
    CHECK(read_file(tmp.sub("eval/report.csv")) == read_file(tmp.sub("eval2/report.csv")));

    RunResult cmp = run_process(kCli + " --out " + q(tmp.sub("cmp")) + " compare-dist --real " +
                                q(data) + " --synth " + q(tmp.sub("synth")) + " --bins 40");
    INFO(cmp.output);
    REQUIRE(cmp.exit_code == 0);
    const std::string dist = read_file(tmp.sub("cmp/distribution.csv"));
    CHECK(dist.rfind("bin_center,real,synthetic\n", 0) == 0);
    CHECK(std::count(dist.begin(), dist.end(), '\n') == 41);  // header + one row per bin
    CHECK(std::filesystem::exists(tmp.sub("cmp/jsd.txt")));

    // missing classes in the data -> pre-validation error
    RunResult bad = run_process(kCli + " --seed 31 --out " + q(tmp.sub("badclf")) +
                                " train-clf --data " + q(tmp.sub("synth")) +
                                " --image-size 32 --max-epochs 1");
    CHECK(bad.exit_code == 3);
}

TEST_CASE("resumed cli training appends to the same loss log", "[cli][slowish]") {
    TempDir tmp("cliresume");
    const std::string data = tmp.sub("data");
    REQUIRE(run_process(kCli + " --seed 41 --out " + q(data) +
                        " phantom --n-yes 10 --n-no 0 --size 32")
                .exit_code == 0);
    const std::string common =
        " --image-size 32 --z-dim 8 --epochs 2 --steps-per-epoch 3 --batch-size 2 "
        "--sample-every 0";

    // uninterrupted run
    REQUIRE(run_process(kCli + " --seed 41 --out " + q(tmp.sub("full")) + " train-gan --data " +
                        q(data) + common)
                .exit_code == 0);

    // stop after epoch 1, then resume into the same output directory
    REQUIRE(run_process(kCli + " --seed 41 --out " + q(tmp.sub("part")) + " train-gan --data " +
                        q(data) +
                        " --image-size 32 --z-dim 8 --epochs 1 --steps-per-epoch 3 "
                        "--batch-size 2 --sample-every 0")
                .exit_code == 0);
    REQUIRE(run_process(kCli + " --seed 41 --out " + q(tmp.sub("part")) + " train-gan --data " +
                        q(data) + common + " --resume " + q(tmp.sub("part/gan_epoch_1.ckpt")))
                .exit_code == 0);

    CHECK(read_file(tmp.sub("full/gan_loss.csv")) == read_file(tmp.sub("part/gan_loss.csv")));
    CHECK(read_file(tmp.sub("full/gan_epoch_2.ckpt")) ==
          read_file(tmp.sub("part/gan_epoch_2.ckpt")));
}
