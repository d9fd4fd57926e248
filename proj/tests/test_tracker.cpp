#include "oracles.hpp"

#include "posfuse/tracker.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace posfuse;

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

ObservationModel scalar_sensor(double r, double alpha_df, double lo = -1e6, double hi = 1e6)
{
    ObservationModel obs;
    obs.H = m1(1.0);
    obs.R = m1(r);
    obs.alpha_df = alpha_df;
    obs.fov = Box{v1(lo), v1(hi)};
    return obs;
}

Observation obs_at(double y, std::uint32_t index = 0, std::uint32_t time = 1, std::uint32_t sensor = 0)
{
    return Observation{v1(y), ObservationId{sensor, time, index}};
}

/// Presence after the update, evaluated from its defining formula on a grid.
double grid_posterior(const MaxMixture& prior, const std::vector<double>& ys, double r, double alpha_df, double f_fa,
                      const std::vector<double>& support, double x)
{
    double best = alpha_df * oracle::mixture1(prior, x);
    for (double y : ys) {
        const double d = std::max(
            f_fa, oracle::grid_sup(support, [&](double s) { return oracle::kernel1(y, s, r) * oracle::mixture1(prior, s); }));
        best = std::max(best, oracle::kernel1(y, x, r) * oracle::mixture1(prior, x) / d);
    }
    return best;
}

}  // namespace

TEST(Predict, EmptyPriorYieldsBirth)
{
    MaxMixture birth(1);
    birth.add(make_component(0.01, v1(3.0), m1(100.0)));
    auto out = predict(MaxMixture(1), MotionModel{m1(1.0), m1(1.0)}, BirthModel{birth, 0.01});
    EXPECT_EQ(out, birth);
}

TEST(Predict, IdentityTransitionAddsNoise)
{
    MaxMixture f(2), birth(2);
    f.add(make_component(0.7, Vector::Zero(2), Matrix::Identity(2, 2)));
    birth.add(make_component(0.01, Vector::Ones(2), 9.0 * Matrix::Identity(2, 2)));
    auto out = predict(f, MotionModel{Matrix::Identity(2, 2), 0.5 * Matrix::Identity(2, 2)}, BirthModel{birth, 0.01});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_TRUE(out.components[0].cov.isApprox(1.5 * Matrix::Identity(2, 2)));
    EXPECT_DOUBLE_EQ(out.components[0].weight(), 0.7);
    EXPECT_EQ(out.components[1], birth.components[0]);
}

TEST(Predict, QuarterExponentMatchesGrid)
{
    const double mu = -1.0, p = 0.8, q = 0.3, g = 1.1, w = 0.25;
    MaxMixture f(1);
    f.add(make_component(0.6, v1(mu), m1(p)));
    auto out = predict(f, MotionModel{m1(g), m1(q)}, BirthModel{MaxMixture(1), 0.0}, w);
    EXPECT_NEAR(out.components[0].cov(0, 0), g * p * g + 4.0 * q, 1e-14);
    const auto xs = oracle::grid(mu - 10.0 * std::sqrt(p), mu + 10.0 * std::sqrt(p), 1e-3);
    for (double xp = -6.0; xp <= 4.0; xp += 0.25) {
        const double sup = oracle::grid_sup(xs, [&](double x) {
            return std::pow(oracle::kernel1(xp, g * x, q), w) * 0.6 * oracle::kernel1(x, mu, p);
        });
        EXPECT_NEAR(eval_mixture(out, v1(xp)), sup, 1e-6);
    }
}

TEST(Predict, DiscountOnlyInflatesCovariance)
{
    std::mt19937_64 rng(1);
    auto f = oracle::random_mixture(rng, 4, 4);
    Matrix q = oracle::random_spd(rng, 4);
    MotionModel motion{Matrix::Identity(4, 4), q};
    auto full = predict(f, motion, {MaxMixture(4), 0.0}, 1.0);
    auto disc = predict(f, motion, {MaxMixture(4), 0.0}, 0.25);
    for (std::size_t i = 0; i < f.size(); ++i) {
        EXPECT_EQ(full.components[i].log_weight, disc.components[i].log_weight);
        EXPECT_TRUE(full.components[i].mean.isApprox(disc.components[i].mean));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(disc.components[i].cov - full.components[i].cov));
        EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(Update, PerfectDetection)
{
    MaxMixture f(1);
    f.add(make_component(1.0, v1(2.0), m1(1.0)));
    auto out = update(f, {obs_at(2.0)}, scalar_sensor(1.0, 0.3), ClutterModel{0.01});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NEAR(out.components[0].weight(), 0.3, 1e-15);
    EXPECT_NEAR(out.components[1].weight(), 1.0, 1e-15);
    EXPECT_TRUE(out.components[0].tags.empty());
    EXPECT_EQ(out.components[1].tags.size(), 1u);
}

TEST(Update, NoObservationsScalesWeights)
{
    auto f = MaxMixture(1, {make_component(0.5, v1(0.0), m1(1.0)), make_component(0.2, v1(5.0), m1(2.0))});
    auto out = update(f, {}, scalar_sensor(1.0, 0.3), ClutterModel{0.01});
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NEAR(out.components[0].weight(), 0.15, 1e-15);
    EXPECT_NEAR(out.components[1].weight(), 0.06, 1e-15);
}

TEST(Update, OutsideFieldOfViewIsNeverMissed)
{
    auto f = MaxMixture(1, {make_component(0.5, v1(50.0), m1(1.0))});
    auto out = update(f, {}, scalar_sensor(1.0, 0.3, 0.0, 10.0), ClutterModel{0.01});
    EXPECT_NEAR(out.components[0].weight(), 0.5, 1e-15);
}

TEST(Update, MatchesGridFormula)
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> pos(-4.0, 4.0), var(0.3, 2.0), wt(0.1, 1.0);
    for (int t = 0; t < 10; ++t) {
        MaxMixture f(1);
        f.add(make_component(wt(rng), v1(pos(rng)), m1(var(rng))));
        f.add(make_component(wt(rng), v1(pos(rng)), m1(var(rng))));
        const double r = var(rng), y = pos(rng), f_fa = 0.05;
        auto out = update(f, {obs_at(y)}, scalar_sensor(r, 0.3), ClutterModel{f_fa});
        EXPECT_EQ(out.size(), 4u);
        const auto support = oracle::grid(-20.0, 20.0, 1e-3);
        double err = 0.0;
        for (double x = -8.0; x <= 8.0; x += 0.05)
            err = std::max(err, std::abs(eval_mixture(out, v1(x)) - grid_posterior(f, {y}, r, 0.3, f_fa, support, x)));
        EXPECT_LE(err, 1e-6);
    }
}

TEST(Update, ComponentCountAndWeightBound)
{
    std::mt19937_64 rng(22);
    auto f = oracle::random_mixture(rng, 1, 6);
    std::vector<Observation> ys;
    for (std::uint32_t i = 0; i < 5; ++i) ys.push_back(obs_at(3.0 * i - 6.0, i));
    auto out = update(f, ys, scalar_sensor(0.5, 0.3), ClutterModel{1e-3});
    EXPECT_EQ(out.size(), f.size() * (1 + ys.size()));
    for (const auto& c : out.components) EXPECT_LE(c.log_weight, 1e-15);
}

TEST(Update, RejectsBadClutter)
{
    auto f = MaxMixture(1, {make_component(0.5, v1(0.0), m1(1.0))});
    EXPECT_THROW(update(f, {}, scalar_sensor(1.0, 0.3), ClutterModel{0.0}), InvalidParameter);
    EXPECT_THROW(update(f, {}, scalar_sensor(1.0, 1.5), ClutterModel{0.1}), InvalidParameter);
}

TEST(Update, SensorOffsetRecentresObservations)
{
    auto f = MaxMixture(1, {make_component(1.0, v1(10.0), m1(1.0))});
    auto obs = scalar_sensor(1.0, 0.3);
    obs.sensor_offset = v1(4.0);
    auto out = update(f, {obs_at(6.0)}, obs, ClutterModel{0.01});
    EXPECT_NEAR(out.components[1].weight(), 1.0, 1e-15);
    EXPECT_NEAR(out.components[1].mean(0), 10.0, 1e-15);
}

TEST(Maintain, CleanMixtureUnchanged)
{
    auto f = MaxMixture(1, {make_component(0.5, v1(0.0), m1(1.0)), make_component(0.3, v1(40.0), m1(1.0))});
    EXPECT_EQ(maintain(f, 1e-4, 0.75, 10), f);
}

TEST(Maintain, CoincidentComponentsCollapse)
{
    auto c = make_component(0.5, v1(1.0), m1(2.0));
    auto f = MaxMixture(1, {c, c, c});
    EXPECT_EQ(maintain(f, 1e-4, 0.75, 10).size(), 1u);
}

TEST(Maintain, CapKeepsTopWeighted)
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> w(1e-3, 1.0);
    MaxMixture f(1);
    for (int i = 0; i < 500; ++i) f.add(make_component(w(rng), v1(100.0 * i), m1(1.0)));
    auto g = maintain(f, 1e-4, 0.75, 100);
    ASSERT_EQ(g.size(), 100u);
    std::vector<double> ws;
    for (const auto& c : f.components) ws.push_back(c.log_weight);
    std::sort(ws.rbegin(), ws.rend());
    std::vector<double> kept;
    for (const auto& c : g.components) kept.push_back(c.log_weight);
    std::sort(kept.rbegin(), kept.rend());
    ws.resize(100);
    EXPECT_EQ(kept, ws);
}

TEST(Maintain, DisabledIsIdentity)
{
    auto c = make_component(1e-9, v1(1.0), m1(2.0));
    auto f = MaxMixture(1, {c, c});
    MaintenanceConfig cfg;
    cfg.enabled = false;
    EXPECT_EQ(maintain(f, cfg), f);
}

TEST(Extraction, ThresholdValue)
{
    // 0.1 * 0.3^0.3 evaluated independently.
    EXPECT_NEAR(confirmation_threshold(0.1, 0.3), 0.1 * std::exp(0.3 * std::log(0.3)), 1e-15);
    EXPECT_NEAR(confirmation_threshold(0.1, 0.3), 0.0696845, 1e-7);
}

TEST(Extraction, NothingAboveThreshold)
{
    auto f = MaxMixture(1, {make_component(0.01, v1(0.0), m1(1.0), {{0, 1, 0}})});
    EXPECT_TRUE(extract_tracks(f, ExtractionConfig{0.1, 1, 10}, 0.3, 1).empty());
}

TEST(Extraction, ThresholdBoundary)
{
    auto f = MaxMixture(1, {make_component(0.07, v1(0.0), m1(1.0), {{0, 1, 0}}),
                            make_component(0.069, v1(50.0), m1(1.0), {{0, 1, 1}})});
    auto tracks = extract_tracks(f, ExtractionConfig{0.1, 1, 10}, 0.3, 1);
    ASSERT_EQ(tracks.size(), 1u);
    EXPECT_DOUBLE_EQ(tracks[0].weight, 0.07);
}

TEST(Extraction, SharedObservationDisqualifies)
{
    ObservationId shared{0, 1, 0};
    auto f = MaxMixture(1, {make_component(0.8, v1(0.0), m1(1.0), {shared}),
                            make_component(0.9, v1(1.0), m1(1.0), {shared, {1, 1, 0}})});
    auto tracks = extract_tracks(f, ExtractionConfig{0.1, 1, 10}, 0.3, 1);
    ASSERT_EQ(tracks.size(), 1u);
    EXPECT_DOUBLE_EQ(tracks[0].weight, 0.9);
}

TEST(Extraction, OldTagsOutsideWindowDoNotClash)
{
    ObservationId old{0, 1, 0};
    auto f = MaxMixture(1, {make_component(0.8, v1(0.0), m1(1.0), {old, {0, 20, 0}}),
                            make_component(0.9, v1(1.0), m1(1.0), {old, {0, 20, 1}})});
    EXPECT_EQ(extract_tracks(f, ExtractionConfig{0.1, 1, 10}, 0.3, 20).size(), 2u);
}

TEST(Extraction, UnobservedComponentsSkipped)
{
    auto f = MaxMixture(1, {make_component(0.9, v1(0.0), m1(1.0))});
    EXPECT_TRUE(extract_tracks(f, ExtractionConfig{0.1, 1, 10, true}, 0.3, 1).empty());
    EXPECT_EQ(extract_tracks(f, ExtractionConfig{0.1, 1, 10, false}, 0.3, 1).size(), 1u);
}

TEST(Extraction, SensorCountRaisesThreshold)
{
    const double tau = confirmation_threshold(0.1, 0.3);
    auto above = MaxMixture(1, {make_component(tau * tau * 1.01, v1(0.0), m1(1.0), {{0, 1, 0}})});
    auto below = MaxMixture(1, {make_component(tau * tau * 0.99, v1(0.0), m1(1.0), {{0, 1, 0}})});
    EXPECT_EQ(extract_tracks(above, ExtractionConfig{0.1, 2, 10}, 0.3, 1).size(), 1u);
    EXPECT_TRUE(extract_tracks(below, ExtractionConfig{0.1, 2, 10}, 0.3, 1).empty());
    EXPECT_EQ(extract_tracks(below, ExtractionConfig{0.1, 1, 10}, 0.3, 1).size(), 0u);
    EXPECT_EQ(extract_tracks(below, ExtractionConfig{0.1, 3, 10}, 0.3, 1).size(), 1u);
}

TEST(KalmanEquivalence, SingleTargetTwentyScans)
{
    // Nearly-constant-velocity target in the plane with position observations.
    Matrix g = Matrix::Identity(4, 4);
    g(0, 1) = g(2, 3) = 1.0;
    Matrix q = Matrix::Zero(4, 4);
    q.block(0, 0, 2, 2) << 0.0625, 0.125, 0.125, 0.25;
    q.block(2, 2, 2, 2) = q.block(0, 0, 2, 2);
    ObservationModel obs;
    obs.H = Matrix::Zero(2, 4);
    obs.H(0, 0) = obs.H(1, 2) = 1.0;
    obs.R = 25.0 * Matrix::Identity(2, 2);
    obs.alpha_df = 1e-12;
    obs.fov = Box{Vector::Constant(2, -1e9), Vector::Constant(2, 1e9)};

    Vector x0(4);
    x0 << 100.0, 3.0, 200.0, -2.0;
    Matrix p0 = Vector(Eigen::Vector4d(100.0, 25.0, 100.0, 25.0)).asDiagonal();
    MaxMixture f(4);
    f.add(make_component(1.0, x0, p0));
    Eigen::Vector4d m = Eigen::Vector4d(x0);
    Eigen::Matrix4d p = Eigen::Matrix4d(p0);
    const Eigen::Matrix4d G = Eigen::Matrix4d(g), Q = Eigen::Matrix4d(q);
    Eigen::Matrix<double, 2, 4> H = Eigen::Matrix<double, 2, 4>(obs.H);
    const Eigen::Matrix2d R = Eigen::Matrix2d(obs.R);

    std::mt19937_64 rng(24);
    std::normal_distribution<double> noise(0.0, 5.0);
    for (std::uint32_t k = 1; k <= 20; ++k) {
        Vector y(2);
        y << 100.0 + 3.0 * k + noise(rng), 200.0 - 2.0 * k + noise(rng);
        f = predict(f, MotionModel{g, q}, {MaxMixture(4), 0.0});
        f = prune(update(f, {Observation{y, {0, k, 0}}}, obs, ClutterModel{1e-300}), 1e-6);

        // Information-form Kalman filter.
        m = G * m;
        p = G * p * G.transpose() + Q;
        Eigen::Matrix4d info = p.inverse() + H.transpose() * R.inverse() * H;
        Eigen::Matrix4d post = info.inverse();
        m = post * (p.inverse() * m + H.transpose() * R.inverse() * Eigen::Vector2d(y));
        p = post;

        ASSERT_EQ(f.size(), 1u);
        const auto& c = f.components[0];
        EXPECT_LE((Eigen::Vector4d(c.mean) - m).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff()));
        EXPECT_LE((Eigen::Matrix4d(c.cov) - p).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, p.cwiseAbs().maxCoeff()));
    }
}
