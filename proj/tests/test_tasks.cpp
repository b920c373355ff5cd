#include <amlora/errors.hpp>
#include <amlora/harness.hpp>
#include <amlora/tasks.hpp>

#include <gtest/gtest.h>

#include <set>

using namespace amlora;

namespace {

// Bag-of-words classifier with hand-fixed weights: one point per signature
// token of a class. Independent of the model code.
std::uint32_t count_oracle(const TaskSpec &spec, const Example &ex)
{
    std::vector<int> votes(spec.num_classes, 0);
    for (auto t : ex.tokens) {
        if (t < spec.signature_offset)
            continue;
        const std::size_t c = (t - spec.signature_offset) / spec.tokens_per_class;
        if (c < spec.num_classes)
            ++votes[c];
    }
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < votes.size(); ++c)
        if (votes[c] > votes[best])
            best = c;
    return best;
}

double oracle_accuracy(const TaskSpec &spec, const std::vector<Example> &split)
{
    std::size_t hit = 0;
    for (const auto &ex : split)
        hit += count_oracle(spec, ex) == ex.label;
    return static_cast<double>(hit) / static_cast<double>(split.size());
}

} // namespace

TEST(Tasks, GenerationIsAPureFunctionOfTheSpec)
{
    const TaskStream s = make_stream({}, "1", 5);
    const Dataset a = generate_task(s.tasks[1]);
    const Dataset b = generate_task(s.tasks[1]);
    ASSERT_EQ(a.train.size(), 1000u);
    ASSERT_EQ(a.eval.size(), 400u);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        EXPECT_EQ(a.train[i].tokens, b.train[i].tokens);
        EXPECT_EQ(a.train[i].label, b.train[i].label);
    }
    const Dataset other = generate_task(make_stream({}, "1", 6).tasks[1]);
    EXPECT_NE(other.train[0].tokens, a.train[0].tokens);
}

TEST(Tasks, TrainAndEvalSplitsAreDisjoint)
{
    StreamOptions o;
    o.seq_len = 2;
    o.vocab_size = 24;
    o.tokens_per_class = 1;
    o.num_tasks = 2;
    o.train_per_task = 40;
    o.eval_per_task = 20;
    const TaskStream s = make_stream(o, "1", 0);
    for (const auto &spec : s.tasks) {
        const Dataset d = generate_task(spec);
        std::set<std::uint64_t> seen;
        for (const auto &ex : d.train)
            seen.insert(example_hash(ex));
        for (const auto &ex : d.eval)
            EXPECT_EQ(seen.count(example_hash(ex)), 0u);
    }
}

TEST(Tasks, SignatureBlocksDoNotOverlap)
{
    const TaskStream s = make_stream({}, "1", 0);
    std::set<std::size_t> used;
    for (const auto &spec : s.tasks) {
        EXPECT_GE(spec.signature_offset, spec.background_end);
        for (std::size_t t = 0; t < spec.num_classes * spec.tokens_per_class; ++t)
            EXPECT_TRUE(used.insert(spec.signature_offset + t).second);
    }
    EXPECT_LE(*used.rbegin(), 127u);
}

TEST(Tasks, VocabularyOverflowIsAConfigError)
{
    StreamOptions o;
    o.vocab_size = 64;
    o.tokens_per_class = 4;
    o.num_tasks = 4;
    EXPECT_THROW(make_stream(o, "1", 0), ConfigError);
    o.train_per_task = 999;
    o.vocab_size = 128;
    EXPECT_THROW(make_stream(o, "1", 0), ConfigError);
}

TEST(Tasks, BuiltInOrders)
{
    EXPECT_EQ(task_order("1", 4), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(task_order("2", 4), (std::vector<std::size_t>{0, 1, 3, 2}));
    EXPECT_EQ(task_order("3", 4), (std::vector<std::size_t>{3, 2, 1, 0}));
    EXPECT_THROW(task_order("7", 4), ConfigError);

    const TaskStream a = make_stream({}, "1", 3);
    const TaskStream c = make_stream({}, "3", 3);
    EXPECT_EQ(c.tasks[0].task_id, a.tasks[3].task_id);
    EXPECT_EQ(c.tasks[0].signature_offset, a.tasks[3].signature_offset);
    EXPECT_EQ(c.tasks[0].seed, a.tasks[3].seed);
}

TEST(Tasks, PureSignatureTasksAreLinearlySeparable)
{
    StreamOptions o;
    o.p_sig = 1.0;
    for (const auto &spec : make_stream(o, "1", 2).tasks) {
        const Dataset d = generate_task(spec);
        EXPECT_EQ(oracle_accuracy(spec, d.train), 1.0);
        EXPECT_EQ(oracle_accuracy(spec, d.eval), 1.0);
    }
}

TEST(Tasks, DefaultTasksAreNearlySeparable)
{
    // P(no signature token in 16 draws) = 0.6^16, so the count oracle is almost perfect.
    for (const auto &spec : make_stream({}, "1", 4).tasks)
        EXPECT_GE(oracle_accuracy(spec, generate_task(spec).eval), 0.99);
}

TEST(Tasks, LabelsAreBalanced)
{
    const Dataset d = generate_task(make_stream({}, "1", 1).tasks[0]);
    std::vector<int> count(4, 0);
    for (const auto &ex : d.train)
        ++count[ex.label];
    for (int c : count)
        EXPECT_EQ(c, 250);
}

TEST(Tasks, UntrainedModelsAreNearChanceOnAverage)
{
    // A single random network can correlate with the labels by accident, so
    // pool 5 initializations x 4 tasks x 400 examples: sd of the pooled
    // accuracy under pure chance is about 0.005 plus the per-model spread.
    ExperimentConfig config;
    const TaskStream s = make_stream(config.stream_options(), "1", 0);
    const auto data = generate_stream(s);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto model = build_model(config.model, seed);
        for (const auto &d : data)
            total += evaluate(*model, d);
    }
    const double mean = total / 20.0;
    EXPECT_GE(mean, 0.2);
    EXPECT_LE(mean, 0.3);
}

TEST(Tasks, RotatedGaussianFeatures)
{
    StreamOptions o;
    o.generator = GeneratorKind::rotated_gaussian;
    const TaskStream s = make_stream(o, "1", 0);
    const Dataset d = generate_task(s.tasks[0]);
    EXPECT_EQ(d.feature_dim, 32u);
    EXPECT_EQ(d.train[0].features.size(), 32u);
    EXPECT_TRUE(d.train[0].tokens.empty());
    const Batch b = make_batch(d, d.eval);
    EXPECT_EQ(b.size, d.eval.size());
}
