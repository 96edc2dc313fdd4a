#include "mtsstrat/strat.hpp"
#include "mtsstrat/synthetic.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

using namespace mtsstrat;

namespace {

Matrix planted_clusters(int per, int C, double spread, std::uint64_t seed, std::vector<int>* truth) {
    Rng rng(seed);
    Matrix X(per * C, 2);
    for (int c = 0; c < C; ++c) {
        const double cx = 10.0 * std::cos(2.0 * M_PI * c / C), cy = 10.0 * std::sin(2.0 * M_PI * c / C);
        for (int i = 0; i < per; ++i) {
            X(c * per + i, 0) = cx + spread * rng.normal();
            X(c * per + i, 1) = cy + spread * rng.normal();
            truth->push_back(c);
        }
    }
    return X;
}

// Union-find component count.
int union_find_components(const Matrix& A) {
    std::vector<int> parent(static_cast<std::size_t>(A.rows()));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (int i = 0; i < A.rows(); ++i) {
        for (int j = 0; j < A.rows(); ++j) {
            if (A(i, j) != 0.0) {
                parent[find(i)] = find(j);
            }
        }
    }
    std::set<int> roots;
    for (int i = 0; i < A.rows(); ++i) {
        roots.insert(find(i));
    }
    return static_cast<int>(roots.size());
}

Graph random_graph(int n, double p, std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    g.adjacency = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (rng.bernoulli(p)) {
                g.adjacency(i, j) = g.adjacency(j, i) = 1.0;
            }
        }
    }
    return g;
}

} // namespace

TEST(Graphs, LaplacianNullityEqualsComponentCount) {
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 5 + rep % 20;
        const auto g = random_graph(n, 0.04 + 0.01 * (rep % 10), 900 + rep);
        const Matrix L = laplacian(g);
        EXPECT_NEAR((L.rowwise().sum()).cwiseAbs().maxCoeff(), 0.0, 1e-12);
        const Vector ev = symmetric_eigen(L).eigenvalues();
        int zeros = 0;
        for (Eigen::Index k = 0; k < ev.size(); ++k) {
            zeros += std::abs(ev(k)) < 1e-9;
        }
        const int ref = union_find_components(g.adjacency);
        EXPECT_EQ(zeros, ref) << "rep " << rep;
        EXPECT_EQ(count_components(g), ref) << "rep " << rep;
    }
}

TEST(Graphs, ThresholdGraphKeepsEdgesAtOrAboveTheta) {
    SimilarityMatrix S;
    S.values = Matrix(3, 3);
    S.values << 1.0, 0.5, 0.2, 0.5, 1.0, 0.7, 0.2, 0.7, 1.0;
    S.row_ids = S.col_ids = {"a", "b", "c"};
    const auto g = threshold_graph(S, 0.5);
    EXPECT_EQ(g.num_edges(), 2u);
    EXPECT_EQ(g.adjacency(0, 0), 0.0);
    EXPECT_EQ(threshold_graph(S, 0.71).num_edges(), 0u);
    EXPECT_EQ(count_components(threshold_graph(S, 0.6)), 2);
    S.values(0, 1) = 0.9;
    EXPECT_THROW(threshold_graph(S, 0.5), DataError);
}

TEST(Graphs, KnnGraphIsSymmetricWithAtLeastKNeighbours) {
    std::vector<int> truth;
    const Matrix X = planted_clusters(10, 2, 1.0, 4, &truth);
    const auto g = knn_graph(X, 3);
    EXPECT_TRUE(g.adjacency.isApprox(g.adjacency.transpose()));
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        EXPECT_GE((g.adjacency.row(i).array() > 0.0).count(), 3);
        EXPECT_EQ(g.adjacency(i, i), 0.0);
    }
}

TEST(Clustering, SpectralRecoversPlantedClusters) {
    std::vector<int> truth;
    const Matrix X = planted_clusters(20, 3, 1.0, 5, &truth);
    const auto r = spectral_clustering(knn_graph(X, 8), 3, 1);
    EXPECT_GE(adjusted_rand_index(r.assignment.labels, truth), 0.95);
}

TEST(Clustering, SpectralIsPermutationInvariant) {
    std::vector<int> truth;
    const Matrix X = planted_clusters(15, 3, 1.5, 6, &truth);
    std::vector<int> perm(static_cast<std::size_t>(X.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(2);
    rng.shuffle(perm);
    Matrix Xp(X.rows(), 2);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        Xp.row(static_cast<Eigen::Index>(i)) = X.row(perm[i]);
    }
    const auto a = spectral_clustering(knn_graph(X, 6), 3, 3).assignment.labels;
    const auto b = spectral_clustering(knn_graph(Xp, 6), 3, 3).assignment.labels;
    std::vector<int> b_back(a.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        b_back[perm[i]] = b[i];
    }
    EXPECT_DOUBLE_EQ(adjusted_rand_index(a, b_back), 1.0);
}

TEST(Clustering, CviSelectsPlantedCount) {
    std::vector<int> truth;
    const Matrix X = planted_clusters(20, 3, 1.0, 7, &truth);
    const auto sel = select_num_clusters(X, {2, 3, 4, 5, 6, 7, 8}, 10, 1);
    EXPECT_EQ(sel.best_silhouette, 3);
    EXPECT_EQ(sel.best_davies_bouldin, 3);
    EXPECT_EQ(sel.chosen, 3);
    EXPECT_THROW(select_num_clusters(X, {1, 3}, 10, 1), ConfigError);
}

TEST(Clustering, CvisMatchBruteForce) {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 8 + rep;
        Matrix X(n, 3);
        std::vector<int> lab(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            lab[i] = i < 3 ? i : static_cast<int>(rng.index(3));
            for (int j = 0; j < 3; ++j) {
                X(i, j) = rng.normal() + lab[i];
            }
        }
        lab[3] = 2; // keep a singleton possible elsewhere but never empty clusters
        const Matrix D = euclidean_distances(X);
        EXPECT_NEAR(silhouette(D, lab), oracle::brute_silhouette(D, lab), 1e-12);
        EXPECT_NEAR(davies_bouldin(X, lab), oracle::brute_davies_bouldin(X, lab), 1e-12);
    }
    const Matrix D = Matrix::Zero(3, 3);
    EXPECT_THROW(silhouette(D, {0, 0, 0}), DataError);
}

TEST(Clustering, AriKnownValues) {
    EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
    EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}), -0.5, 1e-12);
}

TEST(Tsne, PerplexityCalibratedPerPoint) {
    std::vector<int> truth;
    const Matrix X = planted_clusters(25, 2, 2.0, 9, &truth);
    const Matrix D = euclidean_distances(X);
    for (double perp : {5.0, 15.0, 30.0}) {
        const Matrix P = conditional_affinities(D.cwiseProduct(D), perp, 1e-5);
        for (Eigen::Index i = 0; i < P.rows(); ++i) {
            double H = 0.0;
            for (Eigen::Index j = 0; j < P.cols(); ++j) {
                if (P(i, j) > 0.0) {
                    H -= P(i, j) * std::log(P(i, j));
                }
            }
            EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-12);
            EXPECT_EQ(P(i, i), 0.0);
            EXPECT_LT(std::abs(std::exp(H) - perp), 1e-3) << "perp " << perp << " row " << i;
        }
    }
    EXPECT_THROW(conditional_affinities(D, 50.0, 1e-5), ConfigError);
}

TEST(Tsne, TwoBlobsStaySeparableAndKlDrops) {
    Rng rng(10);
    Matrix X(60, 10);
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
        y.push_back(i % 2);
        for (int j = 0; j < 10; ++j) {
            X(i, j) = rng.normal() + (i % 2 ? 4.0 : 0.0);
        }
    }
    TsneOptions opt;
    opt.perplexity = 15;
    opt.iters = 500;
    const auto e = tsne(X, opt, 3);
    ASSERT_EQ(e.coords.rows(), 60);
    EXPECT_GE(oracle::linear_probe_accuracy(e.coords, y), 0.95);
    ASSERT_GE(e.kl_trace.size(), 2u);
    EXPECT_LT(e.kl_trace.back(), e.kl_trace.front());
    const auto again = tsne(X, opt, 3);
    EXPECT_EQ((again.coords - e.coords).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Parzen, IntegratesToOne) {
    Rng rng(12);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> s;
        for (int i = 0; i < 20 + 10 * rep; ++i) {
            s.push_back(rep % 2 ? rng.normal() * 3.0 : rng.uniform(0, 1));
        }
        double h = 0.0;
        const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
        const double h0 = silverman_bandwidth(s);
        const auto grid = linspace(*lo - 5 * h0, *hi + 5 * h0, 2000);
        const auto pdf = parzen_pdf(s, grid, &h);
        EXPECT_EQ(h, h0);
        EXPECT_NEAR(oracle::trapezoid(grid, pdf), 1.0, 0.02);
    }
    EXPECT_THROW(silverman_bandwidth({1.0, 1.0, 1.0}), DataError);
    EXPECT_GT(silverman_bandwidth({0, 0, 0, 0, 0, 0, 1, 5}), 0.0) << "zero IQR falls back to sd";
}

TEST(Profile, MatchesCountingOracle) {
    SynthConfig cfg;
    cfg.n_negative = 20;
    cfg.n_positive = 17;
    cfg.missing_rate = 0.1;
    const auto ds = mask_padding(generate_synthetic(cfg, 13));
    Rng rng(14);
    std::vector<int> lab;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        lab.push_back(i < 3 ? static_cast<int>(i) : static_cast<int>(rng.index(3)));
    }
    const auto rep = cluster_profile(ds, {lab, 3});
    const auto ref = oracle::count_profile(ds, lab);
    ASSERT_EQ(rep.clusters.size(), 3u);
    for (const auto& c : rep.clusters) {
        EXPECT_EQ(static_cast<int>(c.size), ref.size.at(c.cluster));
        EXPECT_EQ(static_cast<int>(c.positives), ref.positives.at(c.cluster));
        EXPECT_EQ(c.pct_size, 100.0 * ref.size.at(c.cluster) / static_cast<double>(ds.size()));
        for (const auto& b : c.binary) {
            const auto key = std::make_pair(c.cluster, b.feature);
            const int act = ref.active.count(key) ? ref.active.at(key) : 0;
            const int act_pos = ref.active_pos.count(key) ? ref.active_pos.at(key) : 0;
            EXPECT_EQ(static_cast<int>(b.active), act) << b.feature;
            EXPECT_EQ(static_cast<int>(b.active_positive), act_pos) << b.feature;
            EXPECT_EQ(b.pct_active, 100.0 * act / static_cast<double>(c.size));
        }
        for (const auto& pdf : c.pdfs) {
            EXPECT_NEAR(oracle::trapezoid(pdf.grid, pdf.density), 1.0, 0.02) << pdf.name;
        }
    }
    EXPECT_THROW(cluster_profile(ds, {std::vector<int>(ds.size(), 5), 3}), DataError);
}

TEST(Profile, ReportFilesWritten) {
    SynthConfig cfg;
    cfg.n_negative = 6;
    cfg.n_positive = 6;
    const auto ds = generate_synthetic(cfg, 15);
    std::vector<int> lab;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        lab.push_back(static_cast<int>(i % 2));
    }
    const auto dir = std::filesystem::temp_directory_path() / "mtsstrat_profile";
    std::filesystem::remove_all(dir);
    const auto files = write_strat_report(cluster_profile(ds, {lab, 2}), dir);
    EXPECT_GE(files.size(), 4u);
    for (const auto& f : files) {
        EXPECT_TRUE(std::filesystem::exists(f)) << f;
    }
    const auto j = nlohmann::json::parse(std::ifstream(dir / "strat_report.json"));
    EXPECT_EQ(j["format"], "mts-strat-report");
    EXPECT_EQ(j["clusters"].size(), 2u);
}
