#include <amlora/cli.hpp>
#include <amlora/report.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace amlora;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(std::vector<std::string> args)
{
    args.insert(args.begin(), "amlora");
    std::vector<const char *> argv;
    for (const auto &a : args)
        argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::parse_and_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::size_t count(const std::string &text, const std::string &needle)
{
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1))
        ++n;
    return n;
}

const fs::path kDir = fs::temp_directory_path() / "amlora_cli_test";

const std::vector<std::string> kTiny{"--override", "d=16",       "layers=1",    "heads=2",    "seq_len=8",
                                     "vocab=48",   "tokens_per_class=2", "tasks=2", "train_per_task=32",
                                     "eval_per_task=20", "r=2", "alpha=4", "method=seqft,amlora"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string> &tail)
{
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
}

} // namespace

TEST(Cli, VerifyOrthoPrintsFourPassLines)
{
    const Result r = call({"verify-ortho", "--trials", "100"});
    EXPECT_EQ(r.code, cli::kExitOk) << r.err;
    EXPECT_EQ(count(r.out, "PASS"), 4u) << r.out;
    EXPECT_EQ(count(r.out, "FAIL"), 0u);
}

TEST(Cli, GradCheckPasses)
{
    const Result r = call({"grad-check"});
    EXPECT_EQ(r.code, cli::kExitOk) << r.err;
    EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
}

TEST(Cli, UnknownKeyIsNamed)
{
    const Result r = call({"run", "--override", "lambada=1", "--out-dir", (kDir / "bad").string()});
    EXPECT_EQ(r.code, cli::kExitInvalid);
    EXPECT_NE(r.err.find("lambada"), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigAndBadFlags)
{
    EXPECT_EQ(call({"run", "--config", "/nonexistent.cfg"}).code, cli::kExitInvalid);
    EXPECT_EQ(call({"run", "--frobnicate"}).code, cli::kExitInvalid);
    EXPECT_EQ(call({"verify-ortho", "--nonlinearity", "tanh"}).code, cli::kExitInvalid);
    EXPECT_EQ(call({"report", "--out-dir", (kDir / "empty").string()}).code, cli::kExitFailure);
    EXPECT_EQ(call({}).code, cli::kExitInvalid);
}

TEST(Cli, RunWritesReportsThatReaggregate)
{
    fs::remove_all(kDir);
    const fs::path out = kDir / "run";
    const Result r = call(with({"run", "--seeds", "0,1", "--out-dir", out.string(), "--save-checkpoints"}, kTiny));
    ASSERT_EQ(r.code, cli::kExitOk) << r.err;
    for (const char *name : {"metrics.csv", "summary.csv", "trajectory.csv", "overhead.csv", "status.csv", "config.cfg"})
        EXPECT_TRUE(fs::exists(out / name)) << name;
    EXPECT_EQ(read_summary_csv(out / "summary.csv").size(), 4u);
    EXPECT_EQ(read_metrics_csv(out / "metrics.csv").size(), 4u * 3u);

    const Result rep = call({"report", "--out-dir", out.string()});
    EXPECT_EQ(rep.code, cli::kExitOk) << rep.err;
    EXPECT_NE(rep.out.find("amlora"), std::string::npos);

    bool found = false;
    for (const auto &entry : fs::recursive_directory_iterator(out))
        found = found || entry.path().extension() == ".ckpt";
    ASSERT_TRUE(found);

    fs::path ckpt;
    for (const auto &entry : fs::recursive_directory_iterator(out))
        if (entry.path().filename().string().find("amlora") != std::string::npos && entry.path().extension() == ".ckpt")
            ckpt = entry.path();
    ASSERT_FALSE(ckpt.empty());
    const Result gates =
        call(with({"inspect-gates", "--checkpoint", ckpt.string(), "--out-dir", (kDir / "gates").string()}, kTiny));
    EXPECT_EQ(gates.code, cli::kExitOk) << gates.err;
    EXPECT_TRUE(fs::exists(kDir / "gates" / "gates.csv"));
    fs::remove_all(kDir);
}
