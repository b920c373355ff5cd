#include <amlora/ortho.hpp>

#include <amlora/errors.hpp>
#include <amlora/io.hpp>
#include <amlora/random.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace amlora::ortho {

CounterexampleRecord evaluate_pair(std::string function_tag, const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
                                   const Eigen::VectorXd &x, const VectorFn &f)
{
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.cols() != x.size())
        throw DimensionError("A, B and x must share dimensions");
    CounterexampleRecord rec;
    rec.n = static_cast<std::size_t>(x.size());
    rec.function_tag = std::move(function_tag);
    rec.a = a;
    rec.b = b;
    rec.x = x;
    rec.f_ax = f(a * x);
    rec.f_abx = f((a + b) * x);
    rec.residual = a.rows() == 1 ? (a * b.transpose()).norm() : (a.transpose() * b).norm();
    rec.deviation = (rec.f_ax - rec.f_abx).norm();
    return rec;
}

CounterexampleRecord counterexample_1d()
{
    Eigen::MatrixXd a(1, 2), b(1, 2);
    a << 1.0, 0.0;
    b << 0.0, -1.0;
    Eigen::VectorXd x(2);
    x << std::numbers::pi / 2.0, std::numbers::pi;
    return evaluate_pair("sin", a, b, x, [](const Eigen::VectorXd &v) -> Eigen::VectorXd { return v.array().sin(); });
}

CounterexampleRecord counterexample_2d()
{
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
    a(0, 0) = 1.0;
    b(1, 1) = 1.0;
    Eigen::VectorXd x(2);
    x << 1.0, -1.0;
    Eigen::MatrixXd fm(2, 2);
    fm << 1.0, 1.0, 0.0, -1.0;
    return evaluate_pair("linear2", a, b, x, [fm](const Eigen::VectorXd &v) -> Eigen::VectorXd { return fm * v; });
}

Eigen::MatrixXd nd_function_matrix(std::size_t n)
{
    if (n < 2)
        throw UsageError("the nD construction needs n >= 2, got " + std::to_string(n));
    const auto last = static_cast<Eigen::Index>(n - 1);
    Eigen::MatrixXd fm = Eigen::MatrixXd::Zero(last + 1, last + 1);
    fm(0, 0) = 1.0;
    fm(0, last) = 1.0;
    fm(last, last) = -1.0;
    return fm;
}

CounterexampleRecord counterexample_nd(std::size_t n)
{
    const Eigen::MatrixXd fm = nd_function_matrix(n);
    const auto last = static_cast<Eigen::Index>(n - 1);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(last + 1, last + 1);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(last + 1, last + 1);
    a(0, 0) = 1.0;
    b(last, last) = 1.0;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(last + 1);
    x(0) = 1.0;
    x(last) = -1.0;
    return evaluate_pair("linear" + std::to_string(n), a, b, x,
                         [fm](const Eigen::VectorXd &v) -> Eigen::VectorXd { return fm * v; });
}

Nonlinearity parse_nonlinearity(std::string_view text)
{
    if (text == "sin")
        return Nonlinearity::sin;
    if (text == "relu")
        return Nonlinearity::relu;
    if (text == "mlp")
        return Nonlinearity::mlp;
    if (text == "identity")
        return Nonlinearity::identity;
    throw ConfigError("unknown nonlinearity '" + std::string(text) + "'");
}

std::string_view to_string(Nonlinearity f)
{
    switch (f) {
    case Nonlinearity::sin:
        return "sin";
    case Nonlinearity::relu:
        return "relu";
    case Nonlinearity::mlp:
        return "mlp";
    case Nonlinearity::identity:
        return "identity";
    }
    return "?";
}

namespace {

constexpr double kResidualTolerance = 1e-10;

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng &rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
            m(r, c) = dist(rng);
    return m;
}

VectorFn make_function(Nonlinearity kind, Eigen::Index n, std::uint64_t seed)
{
    switch (kind) {
    case Nonlinearity::sin:
        return [](const Eigen::VectorXd &v) -> Eigen::VectorXd { return v.array().sin(); };
    case Nonlinearity::relu:
        return [](const Eigen::VectorXd &v) -> Eigen::VectorXd { return v.cwiseMax(0.0); };
    case Nonlinearity::identity:
        return [](const Eigen::VectorXd &v) -> Eigen::VectorXd { return v; };
    case Nonlinearity::mlp: {
        // One fixed two-layer ReLU network per study.
        Rng rng(mix_seed(seed, {0x6d6c70ULL}));
        const double s = 1.0 / std::sqrt(static_cast<double>(n));
        Eigen::MatrixXd w1 = gaussian_matrix(2 * n, n, rng) * s;
        Eigen::MatrixXd w2 = gaussian_matrix(n, 2 * n, rng) * (s / std::sqrt(2.0));
        return [w1, w2](const Eigen::VectorXd &v) -> Eigen::VectorXd { return w2 * (w1 * v).cwiseMax(0.0); };
    }
    }
    throw UsageError("unhandled nonlinearity");
}

} // namespace

StudySummary random_orthogonality_study(const StudyOptions &o)
{
    if (o.n < 2)
        throw UsageError("the random study needs n >= 2, got " + std::to_string(o.n));
    const auto n = static_cast<Eigen::Index>(o.n);
    const VectorFn f = make_function(o.nonlinearity, n, o.seed);

    StudySummary s;
    s.n = o.n;
    s.trials = o.trials;
    s.nonlinearity = o.nonlinearity;
    std::vector<double> deviations;

    for (std::size_t t = 0; t < o.trials; ++t) {
        Rng rng(mix_seed(o.seed, {0x7472ULL, t}));
        std::uniform_int_distribution<Eigen::Index> rank_dist(1, n);
        const Eigen::Index k = rank_dist(rng);
        const Eigen::MatrixXd a = gaussian_matrix(n, k, rng) * gaussian_matrix(k, n, rng);

        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
        const Eigen::Index rank = qr.rank();
        if (rank >= n) {
            ++s.skipped;
            continue;
        }
        const Eigen::MatrixXd q = Eigen::MatrixXd(qr.householderQ()).leftCols(rank);
        Eigen::MatrixXd b = gaussian_matrix(n, n, rng);
        b -= q * (q.transpose() * b);
        if (o.zero_b)
            b.setZero();
        const Eigen::VectorXd x = gaussian_matrix(n, 1, rng).col(0);

        const CounterexampleRecord rec = evaluate_pair(std::string(to_string(o.nonlinearity)), a, b, x, f);
        if (!(rec.residual < kResidualTolerance))
            throw NumericError("trial " + std::to_string(t) + ": residual " + std::to_string(rec.residual) +
                               " after projection exceeds 1e-10");
        if (o.nonlinearity == Nonlinearity::identity &&
            std::abs(rec.deviation - (b * x).norm()) > 1e-9 * std::max(1.0, rec.deviation))
            throw NumericError("trial " + std::to_string(t) + ": identity deviation differs from ||Bx||");
        if (o.zero_b && rec.deviation != 0.0)
            throw NumericError("trial " + std::to_string(t) + ": nonzero deviation with B = 0");

        s.records.push_back({t, o.n, static_cast<std::size_t>(rank), rec.residual, rec.deviation});
        s.max_residual = std::max(s.max_residual, rec.residual);
        deviations.push_back(rec.deviation);
    }

    if (!deviations.empty()) {
        double sum = 0.0;
        std::size_t above = 0;
        for (double d : deviations) {
            sum += d;
            above += d > 1e-6;
            s.max_deviation = std::max(s.max_deviation, d);
        }
        s.mean_deviation = sum / static_cast<double>(deviations.size());
        s.fraction_deviating = static_cast<double>(above) / static_cast<double>(deviations.size());
        auto mid = deviations.begin() + static_cast<std::ptrdiff_t>(deviations.size() / 2);
        std::nth_element(deviations.begin(), mid, deviations.end());
        s.median_deviation = *mid;
        if (deviations.size() % 2 == 0) {
            const double lower = *std::max_element(deviations.begin(), mid);
            s.median_deviation = 0.5 * (s.median_deviation + lower);
        }
    }
    return s;
}

void write_ortho_report(const StudySummary &summary, const std::filesystem::path &path)
{
    std::ostringstream out;
    out << "trial,n,residual,deviation\n";
    char buf[128];
    for (const auto &r : summary.records) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", r.trial, r.n, r.residual, r.deviation);
        out << buf;
    }
    write_file_atomic(path, out.str());
}

} // namespace amlora::ortho
