#include "sid/bank.hpp"
#include "sid/cli.hpp"
#include "sid/metrics.hpp"
#include "sid/probe.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace sid;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

const char* kTwoTagSpec = R"({
  "dim": 6, "seed": 4, "backbone_id": "toy",
  "clusters": [
    {"label": "real", "generator_tag": "progan", "mean": -0.8, "stddev": 1.0, "count": 40},
    {"label": "fake", "generator_tag": "progan", "mean": 0.8, "stddev": 1.0, "count": 40},
    {"label": "real", "generator_tag": "sdxl", "mean": -0.8, "stddev": 1.0, "count": 30},
    {"label": "fake", "generator_tag": "sdxl", "mean": 0.8, "stddev": 1.0, "count": 30}
  ]})";

struct Workspace {
    sid::test::TempDir dir{"cli"};
    std::string path(const std::string& name) const { return (dir / name).string(); }

    Workspace() {
        write_file(dir / "spec.json", kTwoTagSpec);
        REQUIRE(run({"synth", "--spec", path("spec.json"), "--out", path("bank.ebank")}).code == cli::kExitOk);
    }
};

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("synth") {
    Workspace ws;
    const auto bank = read_bank(ws.path("bank.ebank"));
    CHECK(bank.size() == 140);
    CHECK(bank.dim == 6);
    CHECK(bank.backbone_id == "toy");

    const auto again = run({"synth", "--spec", ws.path("spec.json"), "--out", ws.path("again.ebank")});
    CHECK(again.code == cli::kExitOk);
    CHECK(again.out == "records=140 dim=6\n");
    CHECK(sid::test::slurp(ws.dir / "again.ebank") == sid::test::slurp(ws.dir / "bank.ebank"));

    write_file(ws.dir / "neg.json", R"({"dim": 2, "clusters": [
        {"label": "real", "generator_tag": "g", "mean": 0, "stddev": 1, "count": 2},
        {"label": "fake", "generator_tag": "g", "mean": 0, "stddev": -1, "count": 2}]})");
    const auto neg = run({"synth", "--spec", ws.path("neg.json"), "--out", ws.path("neg.ebank")});
    CHECK(neg.code == cli::kExitDomain);
    CHECK(neg.err.find("cluster 1") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(ws.dir / "neg.ebank"));

    CHECK(run({"synth", "--spec", ws.path("absent.json"), "--out", ws.path("x.ebank")}).code == cli::kExitIo);
    CHECK(run({"synth", "--spec", ws.path("spec.json")}).code == cli::kExitUsage);
}

TEST_CASE("train") {
    Workspace ws;
    const auto t = run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("probe.json"), "--epochs", "30",
                        "--batch-size", "32", "--learning-rate", "0.01"});
    REQUIRE(t.code == cli::kExitOk);
    CHECK(t.out.rfind("epochs_run=30 train_loss=", 0) == 0);
    const auto probe = load_probe(ws.path("probe.json"));
    CHECK(probe.dim == 6);
    CHECK(probe.trained_on == "bank.ebank");
    CHECK(probe.input_backbones == std::vector<std::string>{"toy"});
    CHECK(evaluate(probe, read_bank(ws.path("bank.ebank"))).map > 0.9);

    SUBCASE("rerun is byte-identical") {
        run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("probe2.json"), "--epochs", "30",
             "--batch-size", "32", "--learning-rate", "0.01"});
        CHECK(sid::test::slurp(ws.dir / "probe2.json") == sid::test::slurp(ws.dir / "probe.json"));
    }
    SUBCASE("zero epochs saves the zero probe") {
        CHECK(run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("zero.json"), "--epochs", "0"}).code == 0);
        const auto zero = load_probe(ws.path("zero.json"));
        CHECK(zero.weights == std::vector<double>(6, 0.0));
        CHECK(zero.bias == 0.0);
    }
    SUBCASE("config file, overridden by flags") {
        write_file(ws.dir / "cfg.json", R"({"train": {"epochs": 5, "seed": 3}})");
        CHECK(run({"train", "--config", ws.path("cfg.json"), "--bank", ws.path("bank.ebank"), "--out",
                   ws.path("cfg.json.out"), "--train.epochs", "0"}).code == 0);
        CHECK(load_probe(ws.path("cfg.json.out")).weights == std::vector<double>(6, 0.0));
        write_file(ws.dir / "bad_cfg.json", R"({"train": {"epochz": 5}})");
        CHECK(run({"train", "--config", ws.path("bad_cfg.json"), "--bank", ws.path("bank.ebank"), "--out",
                   ws.path("p.json")}).code == cli::kExitDomain);
    }
    SUBCASE("validation bank and early stopping") {
        const auto v = run({"train", "--bank", ws.path("bank.ebank"), "--val", ws.path("bank.ebank"), "--out",
                            ws.path("p.json"), "--epochs", "3"});
        CHECK(v.code == 0);
        CHECK(v.out.find("val_loss=") != std::string::npos);
        const auto es = run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("p.json"),
                             "--train.early_stop.enabled", "true", "--epochs", "2000", "--learning-rate", "0.05",
                             "--train.early_stop.min_delta", "0.01"});
        CHECK(es.code == 0);
        CHECK(es.out.find("epochs_run=2000") == std::string::npos);
    }
    SUBCASE("errors") {
        CHECK(run({"train", "--out", ws.path("p.json")}).code == cli::kExitUsage);
        CHECK(run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("p.json"), "--epochs", "many"}).code ==
              cli::kExitDomain);
        CHECK(run({"train", "--bank", ws.path("none.ebank"), "--out", ws.path("p.json")}).code == cli::kExitIo);

        write_file(ws.dir / "one.json", R"({"dim": 2, "clusters": [
            {"label": "fake", "generator_tag": "g", "mean": 0, "stddev": 1, "count": 5}]})");
        run({"synth", "--spec", ws.path("one.json"), "--out", ws.path("one.ebank")});
        CHECK(run({"train", "--bank", ws.path("one.ebank"), "--out", ws.path("p.json")}).code == cli::kExitDomain);

        write_file(ws.dir / "junk.ebank", "NOPE and more bytes");
        const auto junk = run({"train", "--bank", ws.path("junk.ebank"), "--out", ws.path("p.json")});
        CHECK(junk.code == cli::kExitIo);
        CHECK(junk.err.find("magic") != std::string::npos);
    }
}

TEST_CASE("eval") {
    Workspace ws;
    REQUIRE(run({"train", "--bank", ws.path("bank.ebank"), "--out", ws.path("probe.json"), "--epochs", "20"}).code == 0);

    const auto csv = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank"), "--report",
                          ws.path("report.csv")});
    REQUIRE(csv.code == cli::kExitOk);
    const std::string text = sid::test::slurp(ws.dir / "report.csv");
    CHECK(line_count(text) == 4);
    CHECK(text.find("\nprogan,") != std::string::npos);
    CHECK(text.find("\nsdxl,") != std::string::npos);

    // mAP on stdout equals the mean of the two per-generator AP cells.
    std::istringstream rows(text);
    std::string line;
    std::getline(rows, line);
    double ap_sum = 0.0;
    for (int r = 0; r < 2; ++r) {
        std::getline(rows, line);
        const auto first = line.find(',');
        ap_sum += std::stod(line.substr(first + 1, line.find(',', first + 1) - first - 1));
    }
    const double printed = std::stod(csv.out.substr(csv.out.find("mAP=") + 4));
    CHECK(printed == doctest::Approx(ap_sum / 2).epsilon(1e-6));

    const auto json = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank"), "--format",
                           "json", "--report", ws.path("report.json")});
    CHECK(json.code == 0);
    const auto report = report_from_json(sid::test::slurp(ws.dir / "report.json"));
    CHECK(report.generators.size() == 2);
    CHECK(report.config_digest == load_probe(ws.path("probe.json")).config_digest);

    const auto to_stdout = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank")});
    CHECK(to_stdout.out.rfind("tag,ap,", 0) == 0);

    const auto again = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank"), "--report",
                            ws.path("report2.csv")});
    CHECK(sid::test::slurp(ws.dir / "report2.csv") == text);

    const auto thr = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank"), "--threshold", "1"});
    CHECK(thr.out.find("avg_acc=0.500000") != std::string::npos);

    SUBCASE("errors") {
        write_file(ws.dir / "d3.json", R"({"dim": 3, "clusters": [
            {"label": "real", "generator_tag": "g", "mean": 0, "stddev": 1, "count": 3},
            {"label": "fake", "generator_tag": "g", "mean": 1, "stddev": 1, "count": 3}]})");
        run({"synth", "--spec", ws.path("d3.json"), "--out", ws.path("d3.ebank")});
        CHECK(run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("d3.ebank")}).code == cli::kExitDomain);

        write_file(ws.dir / "lonely.json", R"({"dim": 6, "clusters": [
            {"label": "real", "generator_tag": "g", "mean": 0, "stddev": 1, "count": 3},
            {"label": "fake", "generator_tag": "g", "mean": 1, "stddev": 1, "count": 3},
            {"label": "fake", "generator_tag": "lonelygen", "mean": 1, "stddev": 1, "count": 3}]})");
        run({"synth", "--spec", ws.path("lonely.json"), "--out", ws.path("lonely.ebank")});
        const auto lonely = run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("lonely.ebank")});
        CHECK(lonely.code == cli::kExitDomain);
        CHECK(lonely.err.find("lonelygen") != std::string::npos);

        CHECK(run({"eval", "--probe", ws.path("probe.json"), "--bank", ws.path("bank.ebank"), "--format", "xml"}).code ==
              cli::kExitUsage);
        CHECK(run({"eval", "--probe", ws.path("nothing.json"), "--bank", ws.path("bank.ebank")}).code == cli::kExitIo);
        write_file(ws.dir / "broken.json", "{\"format\": \"sidprobe-v1\"}");
        CHECK(run({"eval", "--probe", ws.path("broken.json"), "--bank", ws.path("bank.ebank")}).code == cli::kExitIo);
    }
}

TEST_CASE("fuse") {
    Workspace ws;
    auto other = read_bank(ws.path("bank.ebank"));
    other.backbone_id = "second";
    other.dim = 2;
    for (auto& r : other.records) r.vector = {1.0f, -1.0f};
    write_bank(other, ws.path("second.ebank"));

    const auto f = run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("second.ebank"), "--out", ws.path("fused.ebank")});
    REQUIRE(f.code == cli::kExitOk);
    CHECK(f.out == "dim=8 records=140 backbone=toy+second\n");
    CHECK(read_bank(ws.path("fused.ebank")).dim == 8);

    run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("second.ebank"), "--out", ws.path("fused2.ebank")});
    CHECK(sid::test::slurp(ws.dir / "fused2.ebank") == sid::test::slurp(ws.dir / "fused.ebank"));

    CHECK(run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("bank.ebank"), "--out", ws.path("x.ebank")}).code ==
          cli::kExitDomain);
    CHECK(run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("bank.ebank"), "--out", ws.path("x.ebank"),
               "--allow-duplicate-backbones"}).code == cli::kExitOk);
    CHECK(run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("second.ebank"), "--out", ws.path("l2.ebank"),
               "--l2-per-bank"}).code == cli::kExitOk);

    other.records.pop_back();
    write_bank(other, ws.path("short.ebank"));
    const auto mismatch = run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("short.ebank"), "--out", ws.path("x.ebank")});
    CHECK(mismatch.code == cli::kExitDomain);
    CHECK(mismatch.err.find(read_bank(ws.path("bank.ebank")).records.back().id) != std::string::npos);

    CHECK(run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("gone.ebank"), "--out", ws.path("x.ebank")}).code ==
          cli::kExitIo);
    CHECK(run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("second.ebank")}).code == cli::kExitUsage);
    CHECK(run({"fuse", "--out", ws.path("x.ebank")}).code == cli::kExitUsage);
}

TEST_CASE("project") {
    Workspace ws;
    const auto p = run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("proj.csv"), "--n-epochs", "50"});
    REQUIRE(p.code == cli::kExitOk);
    CHECK(p.out == "points=140\n");
    const std::string csv = sid::test::slurp(ws.dir / "proj.csv");
    CHECK(line_count(csv) == 141);
    CHECK(csv.rfind("id,x,y,label,generator_tag\n", 0) == 0);

    run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("proj2.csv"), "--n-epochs", "50"});
    CHECK(sid::test::slurp(ws.dir / "proj2.csv") == csv);

    const auto s = run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("sample.csv"), "--sample", "40",
                        "--seed", "5", "--n-epochs", "20", "--metric", "euclidean"});
    CHECK(s.code == cli::kExitOk);
    CHECK(line_count(sid::test::slurp(ws.dir / "sample.csv")) == 41);
    run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("sample2.csv"), "--sample", "40", "--seed", "5",
         "--n-epochs", "20", "--metric", "euclidean"});
    CHECK(sid::test::slurp(ws.dir / "sample2.csv") == sid::test::slurp(ws.dir / "sample.csv"));

    CHECK(run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("x.csv"), "--sample", "1000"}).code ==
          cli::kExitDomain);
    CHECK(run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("x.csv"), "--n-neighbors", "140"}).code ==
          cli::kExitDomain);
    CHECK(run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("x.csv"), "--metric", "chebyshev"}).code ==
          cli::kExitDomain);
}

TEST_CASE("commands leave their inputs untouched") {
    Workspace ws;
    const std::string bank_bytes = sid::test::slurp(ws.dir / "bank.ebank");
    const std::string spec_bytes = sid::test::slurp(ws.dir / "spec.json");
    run({"train", "--bank", ws.path("bank.ebank"), "--val", ws.path("bank.ebank"), "--out", ws.path("p.json"), "--epochs", "2"});
    const std::string probe_bytes = sid::test::slurp(ws.dir / "p.json");
    run({"eval", "--probe", ws.path("p.json"), "--bank", ws.path("bank.ebank"), "--report", ws.path("r.csv")});
    run({"fuse", "--banks", ws.path("bank.ebank"), ws.path("bank.ebank"), "--allow-duplicate-backbones", "--out", ws.path("f.ebank")});
    run({"project", "--bank", ws.path("bank.ebank"), "--out", ws.path("x.csv"), "--n-epochs", "5"});
    CHECK(sid::test::slurp(ws.dir / "bank.ebank") == bank_bytes);
    CHECK(sid::test::slurp(ws.dir / "spec.json") == spec_bytes);
    CHECK(sid::test::slurp(ws.dir / "p.json") == probe_bytes);
}

TEST_CASE("usage errors and help") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"frobnicate"}).code == cli::kExitUsage);
    CHECK(run({"train", "--no-such-flag", "1"}).code == cli::kExitUsage);
    const auto help = run({"--help"});
    CHECK(help.code == cli::kExitOk);
    CHECK(help.out.find("project") != std::string::npos);
    const auto train_help = run({"train", "--help"});
    CHECK(train_help.code == cli::kExitOk);
    CHECK(train_help.out.find("--train.learning_rate") != std::string::npos);
}
