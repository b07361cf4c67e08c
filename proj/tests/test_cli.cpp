#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "cli.hpp"
#include "knnfuse/checkpoint.hpp"
#include "knnfuse/evalreport.hpp"
#include "knnfuse/featurestore.hpp"
#include "knnfuse/manifest.hpp"
#include "knnfuse/synthetic.hpp"
#include "tempdir.hpp"

using namespace knnfuse;
using nlohmann::json;

namespace {

const std::filesystem::path kFixtures = KNNFUSE_FIXTURE_DIR;

json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string s(const std::filesystem::path& p) { return p.string(); }

}  // namespace

TEST_CASE("bundled fixture matches the generator") {
    const auto fx = xor_fixture(0);
    CHECK(load_bank(kFixtures / "xor_train.csv", BankFormat::Csv) == fx.train);
    CHECK(load_bank(kFixtures / "xor_val.csv", BankFormat::Csv) == fx.val);
    CHECK(load_bank(kFixtures / "xor_test.csv", BankFormat::Csv) == fx.test);
}

TEST_CASE("exit codes") {
    CHECK(cli::run({"knn", "--help"}) == 0);
    CHECK(cli::run({"--help"}) == 0);
    CHECK(cli::run({"knn", "--bogus-flag"}) == 2);
    CHECK(cli::run({}) == 2);
    CHECK(cli::run({"knn", "--queries", "q.fbnk", "--out", "x"}) == 2);
    CHECK(cli::run({"knn", "--bank", "missing.fbnk", "--queries", "q.fbnk", "--out", "x"}) == 1);
    CHECK(cli::run({"knn", "--bank", "a", "--queries", "b", "--out", "x", "--k", "zero"}) == 2);
}

TEST_CASE("sha256 known answer") {
    testutil::TempDir dir("sha");
    {
        std::ofstream out(dir / "abc.txt", std::ios::binary);
        out << "abc";
    }
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("full pipeline on the bundled XOR fixture") {
    testutil::TempDir dir("cli");
    for (const char* part : {"train", "val", "test"}) {
        const auto in = kFixtures / (std::string("xor_") + part + ".csv");
        const auto out = dir / (std::string(part) + ".fbnk");
        REQUIRE(cli::run({"ingest", "--in", s(in), "--format", "csv", "--out", s(out)}) == 0);
        CHECK(std::filesystem::exists(manifest_path(out)));
    }
    const auto train = s(dir / "train.fbnk"), val = s(dir / "val.fbnk"), test = s(dir / "test.fbnk");

    REQUIRE(cli::run({"grid", "--task", "knn", "--train", train, "--val", val, "--out", s(dir / "knn.csv")}) == 0);
    const auto best = read_json(dir / "knn.csv.best.json");
    CHECK(best["val_top1"].get<double>() > 0.95);
    const auto k = best["k"].get<std::string>();
    const auto tau = json(best["tau"].get<double>()).dump();

    REQUIRE(cli::run({"train", "--bank", train, "--val", val, "--alpha", "0.01", "--k", k, "--tau", tau,
                      "--epochs", "20", "--warmup", "2", "--batch", "64", "--out", s(dir / "joint.ckpt")}) == 0);
    const auto ck = read_checkpoint(dir / "joint.ckpt");
    CHECK(ck.config["k"] == k);
    CHECK(read_json(dir / "joint.ckpt.log.json").size() == 20);

    // k and tau default to the checkpoint's values.
    REQUIRE(cli::run({"predict", "--mode", "joint", "--model", s(dir / "joint.ckpt"), "--bank", train, "--queries",
                      test, "--lambda", "0.9", "--out", s(dir / "preds.jsonl")}) == 0);
    const auto pm = read_json(manifest_path(dir / "preds.jsonl"));
    CHECK(pm["config"]["k"] == k);
    CHECK(pm["config"]["tau"] == best["tau"]);
    CHECK(pm["inputs"].size() == 3);
    CHECK(pm["inputs"][2]["sha256"] == sha256_file(test));
    CHECK(pm["version"] == kToolkitVersion);

    REQUIRE(cli::run({"eval", "--preds", s(dir / "preds.jsonl"), "--truth", test, "--out", s(dir / "report.json"),
                      "--pr-classes", "0,1", "--mode", "joint"}) == 0);
    const auto report = read_report(dir / "report.json");
    CHECK(report.n_eval == 400);
    CHECK(report.top1 > 0.95);
    CHECK(report.per_class_pr.size() == 2);
    CHECK(std::filesystem::exists(manifest_path(dir / "report.json")));

    SUBCASE("eval refuses predictions for other samples") {
        CHECK(cli::run({"eval", "--preds", s(dir / "preds.jsonl"), "--truth", train, "--out",
                        s(dir / "bad.json")}) == 1);
    }
    SUBCASE("base mode needs no datastore, knn mode needs no model") {
        CHECK(cli::run({"predict", "--mode", "base", "--model", s(dir / "joint.ckpt"), "--queries", test, "--out",
                        s(dir / "base.jsonl")}) == 0);
        CHECK(cli::run({"predict", "--mode", "knn", "--bank", train, "--queries", test, "--k", "8", "--out",
                        s(dir / "knn.jsonl")}) == 0);
        CHECK(cli::run({"predict", "--mode", "joint", "--bank", train, "--queries", test, "--out",
                        s(dir / "x.jsonl")}) == 2);
    }
}

TEST_CASE("split and ablate subcommands") {
    testutil::TempDir dir("cli");
    const auto all = s(kFixtures / "xor_train.csv");
    REQUIRE(cli::run({"--seed", "3", "split", "--bank", all, "--split", "0.7,0.2", "--out-prefix",
                      s(dir / "part")}) == 0);
    const auto tr = load_bank(dir / "part_train.fbnk", BankFormat::Bin);
    const auto va = load_bank(dir / "part_val.fbnk", BankFormat::Bin);
    const auto te = load_bank(dir / "part_test.fbnk", BankFormat::Bin);
    CHECK(tr.size() == 280);
    CHECK(va.size() == 80);
    CHECK(te.size() == 40);
    CHECK(read_json(manifest_path(dir / "part"))["seeds"]["master"] == 3);

    REQUIRE(cli::run({"ablate", "--train", s(dir / "part_train.fbnk"), "--test", s(dir / "part_test.fbnk"),
                      "--k", "8", "--tau", "0.1", "--epochs", "3", "--warmup", "1", "--batch", "64", "--out-dir",
                      s(dir / "abl")}) == 0);
    std::size_t reports = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "abl")) {
        const auto name = e.path().filename().string();
        reports += name.ends_with(".json") && !name.ends_with(".manifest.json");
    }
    CHECK(reports == 10);
    CHECK(std::filesystem::exists(dir / "abl" / "summary.csv"));
}
