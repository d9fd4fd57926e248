#include "oracles.hpp"

#include "posfuse/baseline_phd.hpp"
#include "posfuse/scenario.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace posfuse;
using namespace posfuse::phd;

namespace {

Vector v1(double a)
{
    Vector v(1);
    v << a;
    return v;
}

Matrix m1(double a)
{
    Matrix m(1, 1);
    m << a;
    return m;
}

ObservationModel scalar_sensor(double r)
{
    ObservationModel obs;
    obs.H = m1(1.0);
    obs.R = m1(r);
    obs.fov = Box{v1(-1e6), v1(1e6)};
    return obs;
}

GmIntensity scalar_intensity(std::initializer_list<std::array<double, 3>> comps)
{
    GmIntensity g{1, {}};
    for (const auto& c : comps) g.components.push_back(GmComponent{c[0], v1(c[1]), m1(c[2]), {}});
    return g;
}

double normal_pdf(double x, double m, double v)
{
    return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

}  // namespace

TEST(PhdPredict, EmptyIntensityGivesBirth)
{
    PhdParams params;
    params.birth = scalar_intensity({{0.1, 0.0, 100.0}});
    auto out = phd_predict(GmIntensity{1, {}}, MotionModel{m1(1.0), m1(1.0)}, params);
    EXPECT_EQ(out, params.birth);
}

TEST(PhdPredict, SurvivalScalesWeight)
{
    PhdParams params;
    auto out = phd_predict(scalar_intensity({{1.0, 0.0, 1.0}}), MotionModel{m1(1.0), m1(1.0)}, params);
    EXPECT_NEAR(out.components[0].weight, 0.999, 1e-15);
    EXPECT_DOUBLE_EQ(out.components[0].cov(0, 0), 2.0);
}

TEST(PhdPredict, MassBookkeeping)
{
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> w(0.0, 2.0);
    PhdParams params;
    params.birth = scalar_intensity({{0.06, 0.0, 100.0}, {0.04, 10.0, 100.0}});
    for (int t = 0; t < 20; ++t) {
        GmIntensity in{1, {}};
        for (int i = 0; i < 8; ++i) in.components.push_back(GmComponent{w(rng), v1(i), m1(1.0), {}});
        auto out = phd_predict(in, MotionModel{m1(1.0), m1(0.5)}, params);
        EXPECT_NEAR(out.mass(), params.p_s * in.mass() + 0.1, 1e-12);
    }
}

TEST(PhdUpdate, NoObservationsScalesByMissProbability)
{
    PhdParams params;
    auto out = phd_update(scalar_intensity({{0.8, 0.0, 1.0}, {0.5, 3.0, 1.0}}), {}, scalar_sensor(1.0), params);
    EXPECT_NEAR(out.components[0].weight, 0.8 * 0.3, 1e-15);
    EXPECT_NEAR(out.components[1].weight, 0.5 * 0.3, 1e-15);
}

TEST(PhdUpdate, ClutterFreeSingleTarget)
{
    PhdParams params;
    params.clutter_intensity = 0.0;
    auto out = phd_update(scalar_intensity({{0.9, 0.0, 1.0}, {0.4, 1000.0, 1.0}}),
                          {Observation{v1(0.2), {0, 1, 0}}}, scalar_sensor(1.0), params);
    // The far component claims no share of the observation.
    EXPECT_NEAR(out.components[2].weight, 1.0, 1e-12);
    EXPECT_LT(out.components[3].weight, 1e-12);
}

TEST(PhdUpdate, MatchesScalarReimplementation)
{
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> pos(-3.0, 3.0), var(0.3, 2.0), wt(0.1, 1.5);
    for (int t = 0; t < 20; ++t) {
        const double w1 = wt(rng), m1_ = pos(rng), p1 = var(rng);
        const double w2 = wt(rng), m2 = pos(rng), p2 = var(rng);
        const double r = var(rng);
        const std::array<double, 2> ys{pos(rng), pos(rng)};
        PhdParams params;
        params.clutter_intensity = 0.05;
        auto out = phd_update(scalar_intensity({{w1, m1_, p1}, {w2, m2, p2}}),
                              {Observation{v1(ys[0]), {0, 1, 0}}, Observation{v1(ys[1]), {0, 1, 1}}}, scalar_sensor(r),
                              params);
        ASSERT_EQ(out.size(), 6u);
        const double pd = 0.7;
        for (int k = 0; k < 2; ++k) {
            const double l1 = pd * w1 * normal_pdf(ys[k], m1_, p1 + r);
            const double l2 = pd * w2 * normal_pdf(ys[k], m2, p2 + r);
            const double den = 0.05 + l1 + l2;
            EXPECT_NEAR(out.components[2 + 2 * k].weight, l1 / den, 1e-12);
            EXPECT_NEAR(out.components[3 + 2 * k].weight, l2 / den, 1e-12);
            EXPECT_NEAR(out.components[2 + 2 * k].mean(0), m1_ + p1 / (p1 + r) * (ys[k] - m1_), 1e-12);
            EXPECT_NEAR(out.components[2 + 2 * k].cov(0, 0), p1 * r / (p1 + r), 1e-12);
        }
    }
}

TEST(PhdUpdate, ZeroClutterMassBound)
{
    PhdParams params;
    params.clutter_intensity = 0.0;
    auto in = scalar_intensity({{0.5, 0.0, 1.0}, {0.7, 2.0, 1.0}});
    std::vector<Observation> ys{{v1(0.1), {0, 1, 0}}, {v1(2.2), {0, 1, 1}}};
    auto out = phd_update(in, ys, scalar_sensor(1.0), params);
    // Each observation contributes exactly one unit of expected cardinality.
    EXPECT_NEAR(out.mass(), 0.3 * in.mass() + 2.0, 1e-12);
}

TEST(CovarianceIntersection, IdempotentOnEqualInputs)
{
    auto a = scalar_intensity({{0.8, 1.0, 2.0}, {0.3, 20.0, 1.0}});
    auto out = ci_fuse(a, a, 0.5);
    ASSERT_EQ(out.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(out.components[i].weight, a.components[i].weight, 1e-14);
        EXPECT_NEAR(out.components[i].mean(0), a.components[i].mean(0), 1e-14);
        EXPECT_NEAR(out.components[i].cov(0, 0), a.components[i].cov(0, 0), 1e-14);
    }
}

TEST(CovarianceIntersection, EqualCovariancesDoNotShrink)
{
    std::mt19937_64 rng(43);
    Matrix p = oracle::random_spd(rng, 3);
    GmIntensity a{3, {GmComponent{1.0, Vector::Zero(3), p, {}}}};
    GmIntensity b{3, {GmComponent{1.0, Vector::Constant(3, 0.1), p, {}}}};
    auto out = ci_fuse(a, b, 0.5);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_TRUE(out.components[0].cov.isApprox(p, 1e-12));
    // Information adds with the omega weights exactly.
    Eigen::MatrixXd info = Eigen::MatrixXd(out.components[0].cov).inverse();
    EXPECT_NEAR(std::log(info.determinant()), std::log(Eigen::MatrixXd(p).inverse().determinant()), 1e-10);
}

TEST(CovarianceIntersection, ScalarExample)
{
    auto out = ci_fuse(scalar_intensity({{1.0, 0.0, 1.0}}), scalar_intensity({{1.0, 2.0, 1.0}}), 0.5);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_NEAR(out.components[0].mean(0), 1.0, 1e-14);
    EXPECT_NEAR(out.components[0].cov(0, 0), 1.0, 1e-14);
}

TEST(CovarianceIntersection, UnpairedPassThroughAndMass)
{
    auto a = scalar_intensity({{1.0, 0.0, 1.0}});
    auto b = scalar_intensity({{0.5, 100.0, 1.0}});
    auto out = ci_fuse(a, b, 0.25);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NEAR(out.mass(), std::pow(1.0, 0.25) * std::pow(0.5, 0.75), 1e-14);
    EXPECT_NEAR(out.components[0].weight / out.components[1].weight, 0.25 / (0.5 * 0.75), 1e-12);
    EXPECT_THROW(ci_fuse(a, b, 1.0), InvalidParameter);
}

TEST(PhdThreshold, EquivalentToPossibilisticForm)
{
    for (double pd : {0.5, 0.7, 0.9})
        EXPECT_NEAR(phd::confirmation_threshold(0.1, pd, 1), posfuse::confirmation_threshold(0.1, 1.0 - pd), 1e-15);
    EXPECT_NEAR(phd::confirmation_threshold(0.1, 0.7, 4), 0.1 * std::pow(0.3, 1.2), 1e-15);
}

TEST(PhdMerge, SummedWeightAndCandidateMetric)
{
    auto in = scalar_intensity({{0.6, 0.0, 1.0}, {0.3, 1.0, 1.0}, {0.2, 50.0, 1.0}});
    auto out = phd_merge(in, 8.0);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NEAR(out.components[0].weight, 0.9, 1e-15);
    EXPECT_NEAR(out.components[0].mean(0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(out.mass(), in.mass(), 1e-15);
}

TEST(PhdPipeline, SingleSensorIsPlainFilter)
{
    PhdModels models;
    models.motion = MotionModel{m1(1.0), m1(0.5)};
    models.params.birth = scalar_intensity({{0.1, 0.0, 400.0}});
    models.params.clutter_intensity = 1e-3;
    models.sensors = {scalar_sensor(1.0)};
    GmIntensity central{1, {}};
    for (std::uint32_t k = 1; k <= 5; ++k) {
        ScanObservations obs{{Observation{v1(2.0 * k), {0, k, 0}}}};
        auto step = phd_centralised_step(central, obs, models, k);
        auto plain = phd_maintain(phd_update(phd_predict(central, models.motion, models.params), obs[0], models.sensors[0],
                                             models.params),
                                  models.params);
        plain = phd_maintain(plain, models.params);
        trim_tags(plain, oldest_tag_time(k, models.params.window));
        EXPECT_EQ(step.posterior, plain);
        central = step.posterior;
    }
}

TEST(PhdPipeline, TwoNodeGossipSymmetric)
{
    PhdModels models;
    models.motion = MotionModel{m1(1.0), m1(0.5)};
    models.params.birth = scalar_intensity({{0.1, 0.0, 400.0}});
    models.params.clutter_intensity = 1e-3;
    models.sensors = {scalar_sensor(1.0), scalar_sensor(1.0)};
    models.sensors[1].sensor_id = 1;
    auto g = NetworkGraph::complete(2);
    ScanObservations obs{{Observation{v1(3.0), {0, 1, 0}}}, {Observation{v1(3.0), {1, 1, 0}}}};
    auto out = phd_decentralised_step({GmIntensity{1, {}}, GmIntensity{1, {}}}, obs, g, metropolis_weights(g), models, 1, 1);
    ASSERT_EQ(out.nodes.size(), 2u);
    ASSERT_EQ(out.nodes[0].size(), out.nodes[1].size());
    for (std::size_t i = 0; i < out.nodes[0].size(); ++i) {
        EXPECT_NEAR(out.nodes[0].components[i].weight, out.nodes[1].components[i].weight, 1e-15);
        EXPECT_TRUE(out.nodes[0].components[i].mean.isApprox(out.nodes[1].components[i].mean));
    }
}

TEST(PhdPipeline, FourSensorScenarioSmoke)
{
    ScenarioConfig cfg;
    cfg.scans = 10;
    auto data = generate(cfg, 0);
    auto models = phd_models(cfg, data.layout);
    GmIntensity central{4, {}};
    for (int k = 1; k <= cfg.scans; ++k) {
        auto step = phd_centralised_step(central, data.observations(k), models, static_cast<std::uint32_t>(k));
        central = step.posterior;
        EXPECT_LT(central.size(), models.params.cap);
        EXPECT_GT(central.size(), 0u);
    }
}
