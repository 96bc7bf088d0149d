#include "cortexflow/autodiff.hpp"
#include "cortexflow/geometry.hpp"
#include "cortexflow/intersect.hpp"
#include "cortexflow/mesh.hpp"
#include "cortexflow/spatial.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace cortexflow;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-10, 10);
    std::vector<Vec3> p(n);
    for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
    return p;
}

Mesh template_at(int level) {
    Mesh m = build_template(62);
    for (int i = 0; i < level; ++i) m = subdivide(m);
    return m;
}

void BM_Subdivide(benchmark::State& state) {
    const Mesh m = template_at(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(subdivide(m));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m.faces.size()));
}
BENCHMARK(BM_Subdivide)->DenseRange(2, 5)->Unit(benchmark::kMillisecond);

void BM_KdTreeNearest(benchmark::State& state) {
    const KdTree tree(random_points(static_cast<std::size_t>(state.range(0)), 1));
    const auto queries = random_points(10000, 2);
    for (auto _ : state)
        for (const auto& q : queries) benchmark::DoNotOptimize(tree.nearest(q));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries.size()));
}
BENCHMARK(BM_KdTreeNearest)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_ChamferDistance(benchmark::State& state) {
    const auto a = random_points(static_cast<std::size_t>(state.range(0)), 3);
    const auto b = random_points(static_cast<std::size_t>(state.range(0)), 4);
    for (auto _ : state) benchmark::DoNotOptimize(chamfer_distance(a, b));
}
BENCHMARK(BM_ChamferDistance)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_SelfIntersection(benchmark::State& state) {
    Mesh m = template_at(static_cast<int>(state.range(0)));
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 0.002);
    for (auto& v : m.vertices) v += Vec3(n(rng), n(rng), n(rng));
    for (auto _ : state) benchmark::DoNotOptimize(count_self_intersecting_faces(m));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m.faces.size()));
}
BENCHMARK(BM_SelfIntersection)->DenseRange(3, 5)->Unit(benchmark::kMillisecond);

void BM_Conv3d(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1));
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> x(static_cast<std::size_t>(n) * n * n * c), w(27 * c * c), b(c);
    for (auto& v : x) v = u(rng);
    for (auto& v : w) v = u(rng);
    const auto xt = ad::Tensor::parameter({n, n, n, c}, x, "x");
    const auto wt = ad::Tensor::parameter({27 * c, c}, w, "w");
    const auto bt = ad::Tensor::parameter({c}, b, "b");
    for (auto _ : state) {
        const auto y = ad::sum(ad::conv3d(xt, wt, bt));
        if (state.range(2)) ad::backward(y);
        benchmark::DoNotOptimize(y.item());
    }
}
BENCHMARK(BM_Conv3d)->Args({32, 8, 0})->Args({32, 8, 1})->Args({16, 16, 1})->Unit(benchmark::kMillisecond);

void BM_MeanCurvature(benchmark::State& state) {
    const Mesh m = template_at(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(mean_curvature(m));
}
BENCHMARK(BM_MeanCurvature)->Arg(4)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
