#include <amlora/random.hpp>

namespace amlora {

namespace {
std::uint64_t splitmix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
{
    std::uint64_t h = splitmix(seed);
    for (auto t : tags)
        h = splitmix(h ^ splitmix(t + 0x632be59bd9b4e019ULL));
    return h;
}

Tensor gaussian(Shape shape, double stddev, Rng &rng)
{
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto &v : t.data())
        v = dist(rng);
    return t;
}

Tensor gaussian(Shape shape, double stddev, std::uint64_t seed)
{
    Rng rng(seed);
    return gaussian(std::move(shape), stddev, rng);
}

} // namespace amlora
