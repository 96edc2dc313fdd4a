#include "mtsstrat/fe.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace mtsstrat;

namespace {

struct RefStats {
    double mean, median, mode, min, max;
};

RefStats reference_stats(std::vector<double> v) {
    RefStats r{};
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    r.mean = s / v.size();
    std::sort(v.begin(), v.end());
    r.median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    r.min = v.front();
    r.max = v.back();
    // Most frequent value; smallest on ties.
    int best = 0;
    for (double x : v) {
        int c = 0;
        for (double y : v) {
            c += (x == y);
        }
        if (c > best || (c == best && x < r.mode)) {
            best = c;
            r.mode = x;
        }
    }
    return r;
}

} // namespace

TEST(Fe, StatsMatchDoubleLoopOracleWithMissingCells) {
    Rng rng(17);
    for (int rep = 0; rep < 40; ++rep) {
        const Eigen::Index F = 1 + rep % 4, T = 1 + rep % 7;
        auto ds = oracle::random_mixed_dataset(1, F, T, 500 + rep);
        auto& r = ds.records[0];
        for (Eigen::Index f = 0; f < F; ++f) {
            for (Eigen::Index t = 1; t < T; ++t) {
                if (rng.bernoulli(0.3)) {
                    r.mask(f, t) = false;
                    r.values(f, t) = 0.0;
                }
            }
        }
        const auto e = engineer_features(r);
        for (Eigen::Index f = 0; f < F; ++f) {
            std::vector<double> obs;
            for (Eigen::Index t = 0; t < T; ++t) {
                if (r.mask(f, t)) {
                    obs.push_back(r.values(f, t));
                }
            }
            const auto ref = reference_stats(obs);
            EXPECT_NEAR(e.stats(f, 0), ref.mean, 1e-12);
            EXPECT_EQ(e.stats(f, 1), ref.median);
            EXPECT_EQ(e.stats(f, 2), ref.mode);
            EXPECT_EQ(e.stats(f, 3), ref.min);
            EXPECT_EQ(e.stats(f, 4), ref.max);
        }
    }
}

TEST(Fe, ConstantSeries) {
    const auto r = make_record("a", Matrix::Constant(2, 5, 3.0), 0);
    const auto e = engineer_features(r);
    EXPECT_TRUE((e.stats.array() == 3.0).all());
}

TEST(Fe, ModeTieTakesSmallest) {
    Matrix v(1, 4);
    v << 2, 1, 2, 1;
    EXPECT_EQ(engineer_features(make_record("a", v, 0)).stats(0, 2), 1.0);
}

TEST(Fe, FullyMissingRowNamesFeature) {
    auto r = make_record("a", Matrix::Zero(2, 3), 0);
    r.mask.row(1).setConstant(false);
    const std::vector<std::string> names{"alpha", "beta"};
    try {
        engineer_features(r, &names);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
    }
}

TEST(Fe, FlattenedLayoutAndSimilarityDoubleLoop) {
    const auto ds = oracle::random_mixed_dataset(5, 3, 4, 77);
    const auto feats = engineer_features(ds);
    for (const auto& f : feats) {
        const Vector flat = f.flattened();
        for (Eigen::Index i = 0; i < 3; ++i) {
            for (Eigen::Index s = 0; s < 5; ++s) {
                EXPECT_EQ(flat(5 * i + s), f.stats(i, s));
            }
        }
    }
    const Matrix S = fe_similarity_matrix(feats, feats);
    for (std::size_t a = 0; a < feats.size(); ++a) {
        for (std::size_t b = 0; b < feats.size(); ++b) {
            double ref = 0.0;
            for (Eigen::Index i = 0; i < 3; ++i) {
                for (Eigen::Index s = 0; s < 5; ++s) {
                    ref += feats[a].stats(i, s) * feats[b].stats(i, s);
                }
            }
            EXPECT_NEAR(S(a, b), ref, 1e-12);
        }
    }
    EXPECT_TRUE(S.isApprox(S.transpose()));
}
