#ifndef MTSSTRAT_STRAT_HPP
#define MTSSTRAT_STRAT_HPP

#include "classify.hpp"
#include "dataset.hpp"
#include "matrix_io.hpp"

#include <numbers>
#include <set>

namespace mtsstrat {

// ---------------------------------------------------------------------------
// Graphs

struct Graph {
    std::vector<std::string> ids;
    Matrix adjacency;
    bool weighted = false;

    Eigen::Index size() const { return adjacency.rows(); }

    std::size_t num_edges() const {
        std::size_t e = 0;
        for (Eigen::Index i = 0; i < size(); ++i) {
            for (Eigen::Index j = i + 1; j < size(); ++j) {
                e += adjacency(i, j) != 0.0;
            }
        }
        return e;
    }
};

inline void check_square_symmetric(const Matrix& S, const char* who) {
    if (S.rows() != S.cols()) {
        throw DataError(std::string(who) + ": matrix must be square");
    }
    const double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    if (((S - S.transpose()).cwiseAbs().array() > 1e-9 * scale).any()) {
        throw DataError(std::string(who) + ": matrix must be symmetric");
    }
}

/// Edge (i, j) iff S(i, j) >= theta and i != j.
inline Graph threshold_graph(const LabeledMatrix& S, double theta, bool weighted = false) {
    check_square_symmetric(S.values, "threshold_graph");
    Graph g;
    g.ids = S.row_ids;
    g.weighted = weighted;
    const Eigen::Index n = S.values.rows();
    g.adjacency = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && S.values(i, j) >= theta) {
                g.adjacency(i, j) = weighted ? S.values(i, j) : 1.0;
            }
        }
    }
    return g;
}

/// Entries below theta set to zero; the sparse intermediate of thresholding.
inline Matrix threshold_matrix(const Matrix& S, double theta) {
    return (S.array() >= theta).select(S, 0.0);
}

inline constexpr double kKnnDistanceFloor = 1e-9;

/// kNN graph from a full distance matrix; union symmetrization, weight 1/d.
inline Graph knn_graph_from_distances(const Matrix& D, Eigen::Index k, std::vector<std::string> ids = {}) {
    check_square_symmetric(D, "knn_graph");
    const Eigen::Index n = D.rows();
    if (k < 1 || k >= n) {
        throw ConfigError("knn_graph: k must lie in [1, n)");
    }
    Graph g;
    g.weighted = true;
    g.ids = ids.empty() ? std::vector<std::string>{} : std::move(ids);
    if (g.ids.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) {
            g.ids.push_back(std::to_string(i));
        }
    }
    g.adjacency = Matrix::Zero(n, n);
    std::size_t floored = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Eigen::Index> order;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) {
                order.push_back(j);
            }
        }
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return D(i, a) < D(i, b); });
        for (Eigen::Index t = 0; t < k; ++t) {
            const Eigen::Index j = order[static_cast<std::size_t>(t)];
            double d = D(i, j);
            if (d < kKnnDistanceFloor) {
                d = kKnnDistanceFloor;
                ++floored;
            }
            g.adjacency(i, j) = g.adjacency(j, i) = 1.0 / d;
        }
    }
    if (floored > 0) {
        log::warn("knn_graph: " + std::to_string(floored) + " near-duplicate neighbor(s); weight capped at 1/" +
                  format_double(kKnnDistanceFloor));
    }
    return g;
}

inline Matrix euclidean_distances(const Matrix& X) {
    const Eigen::Index n = X.rows();
    Matrix D(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        D(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            D(i, j) = D(j, i) = (X.row(i) - X.row(j)).norm();
        }
    }
    return D;
}

inline Graph knn_graph(const Matrix& points, Eigen::Index k, std::vector<std::string> ids = {}) {
    return knn_graph_from_distances(euclidean_distances(points), k, std::move(ids));
}

inline Matrix laplacian(const Graph& g) {
    Matrix L = -g.adjacency;
    L.diagonal().setZero();
    L.diagonal() = g.adjacency.rowwise().sum() - g.adjacency.diagonal();
    return L;
}

/// Component index per node, numbered in order of first node.
inline std::vector<int> connected_components(const Graph& g) {
    const Eigen::Index n = g.size();
    std::vector<int> comp(static_cast<std::size_t>(n), -1);
    int c = 0;
    for (Eigen::Index s = 0; s < n; ++s) {
        if (comp[s] >= 0) {
            continue;
        }
        std::vector<Eigen::Index> stack{s};
        comp[s] = c;
        while (!stack.empty()) {
            const auto u = stack.back();
            stack.pop_back();
            for (Eigen::Index v = 0; v < n; ++v) {
                if (comp[v] < 0 && g.adjacency(u, v) != 0.0) {
                    comp[v] = c;
                    stack.push_back(v);
                }
            }
        }
        ++c;
    }
    return comp;
}

inline int count_components(const Graph& g) {
    const auto c = connected_components(g);
    return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
}

// ---------------------------------------------------------------------------
// Clustering

struct ClusterAssignment {
    std::vector<int> labels;
    int C = 0;
};

/// Renames clusters in order of first appearance.
inline ClusterAssignment canonical_labels(const std::vector<int>& labels) {
    std::map<int, int> rename;
    ClusterAssignment out;
    for (int l : labels) {
        auto [it, inserted] = rename.emplace(l, static_cast<int>(rename.size()));
        out.labels.push_back(it->second);
    }
    out.C = static_cast<int>(rename.size());
    return out;
}

struct KMeansResult {
    std::vector<int> labels;
    Matrix centroids;
    double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; best inertia over restarts.
inline KMeansResult kmeans(const Matrix& X, int C, std::uint64_t seed, int restarts = 10, int max_iters = 300) {
    const Eigen::Index n = X.rows();
    if (C < 1 || C > n) {
        throw ConfigError("kmeans: cluster count must lie in [1, n]");
    }
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < restarts; ++r) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
        Matrix cent(C, X.cols());
        cent.row(0) = X.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
        Vector d2 = (X.rowwise() - cent.row(0)).rowwise().squaredNorm();
        for (int c = 1; c < C; ++c) {
            const double total = d2.sum();
            Eigen::Index pick = 0;
            if (total <= 0.0) {
                pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
            } else {
                double u = rng.uniform() * total;
                for (pick = 0; pick < n - 1; ++pick) {
                    u -= d2(pick);
                    if (u < 0.0) {
                        break;
                    }
                }
            }
            cent.row(c) = X.row(pick);
            d2 = d2.cwiseMin((X.rowwise() - cent.row(c)).rowwise().squaredNorm());
        }
        std::vector<int> lab(static_cast<std::size_t>(n), -1);
        double inertia = 0.0;
        for (int it = 0; it < max_iters; ++it) {
            bool changed = false;
            inertia = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::Index c_best = 0;
                const double db = (cent.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&c_best);
                inertia += db;
                if (lab[i] != static_cast<int>(c_best)) {
                    lab[i] = static_cast<int>(c_best);
                    changed = true;
                }
            }
            if (!changed) {
                break;
            }
            Matrix sums = Matrix::Zero(C, X.cols());
            std::vector<Eigen::Index> counts(static_cast<std::size_t>(C), 0);
            for (Eigen::Index i = 0; i < n; ++i) {
                sums.row(lab[i]) += X.row(i);
                ++counts[static_cast<std::size_t>(lab[i])];
            }
            for (int c = 0; c < C; ++c) {
                if (counts[static_cast<std::size_t>(c)] > 0) {
                    cent.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
                } else {
                    // Empty cluster takes the point farthest from its centroid.
                    Eigen::Index far = 0;
                    Vector dist(n);
                    for (Eigen::Index i = 0; i < n; ++i) {
                        dist(i) = (X.row(i) - cent.row(lab[i])).squaredNorm();
                    }
                    dist.maxCoeff(&far);
                    cent.row(c) = X.row(far);
                }
            }
        }
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.labels = lab;
            best.centroids = cent;
        }
    }
    return best;
}

struct SpectralResult {
    ClusterAssignment assignment;
    Vector eigenvalues;
    Matrix embedding;
};

/// Eigenvectors of the C+1 smallest Laplacian eigenvalues, then k-means.
inline SpectralResult spectral_clustering(const Graph& g, int C, std::uint64_t seed, int restarts = 10) {
    const Eigen::Index n = g.size();
    if (C < 2 || C >= n) {
        throw ConfigError("spectral_clustering: C must satisfy 2 <= C < n");
    }
    const int comps = count_components(g);
    if (comps > C) {
        log::warn("spectral_clustering: graph has " + std::to_string(comps) + " components, more than C=" +
                  std::to_string(C));
    }
    const auto es = symmetric_eigen(laplacian(g));
    const Eigen::Index dims = std::min<Eigen::Index>(C + 1, n);
    SpectralResult out;
    out.eigenvalues = es.eigenvalues();
    out.embedding = es.eigenvectors().leftCols(dims);
    const auto km = kmeans(out.embedding, C, seed, restarts);
    out.assignment = canonical_labels(km.labels);
    out.assignment.C = C;
    return out;
}

namespace detail {

inline int check_cluster_labels(const std::vector<int>& labels, Eigen::Index n, const char* who) {
    if (static_cast<Eigen::Index>(labels.size()) != n) {
        throw DataError(std::string(who) + ": labels do not align with points");
    }
    if (labels.empty()) {
        throw DataError(std::string(who) + ": no points");
    }
    const int C = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int> counts(static_cast<std::size_t>(std::max(C, 0)), 0);
    for (int l : labels) {
        if (l < 0) {
            throw DataError(std::string(who) + ": negative cluster index");
        }
        ++counts[static_cast<std::size_t>(l)];
    }
    if (C < 2) {
        throw DataError(std::string(who) + ": needs at least two clusters");
    }
    for (int c = 0; c < C; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw DataError(std::string(who) + ": cluster " + std::to_string(c) + " is empty");
        }
    }
    return C;
}

} // namespace detail

/// Mean silhouette over points from a distance matrix.
inline double silhouette(const Matrix& D, const std::vector<int>& labels) {
    if (D.rows() != D.cols()) {
        throw DataError("silhouette: distance matrix must be square");
    }
    const int C = detail::check_cluster_labels(labels, D.rows(), "silhouette");
    const Eigen::Index n = D.rows();
    std::vector<double> size(static_cast<std::size_t>(C), 0.0);
    for (int l : labels) {
        size[static_cast<std::size_t>(l)] += 1.0;
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int own = labels[i];
        if (size[static_cast<std::size_t>(own)] <= 1.0) {
            continue;
        }
        std::vector<double> sum(static_cast<std::size_t>(C), 0.0);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) {
                sum[static_cast<std::size_t>(labels[j])] += D(i, j);
            }
        }
        const double a = sum[static_cast<std::size_t>(own)] / (size[static_cast<std::size_t>(own)] - 1.0);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < C; ++c) {
            if (c != own) {
                b = std::min(b, sum[static_cast<std::size_t>(c)] / size[static_cast<std::size_t>(c)]);
            }
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

inline constexpr double kCentroidFloor = 1e-12;

/// Davies-Bouldin index on vector data; lower is better.
inline double davies_bouldin(const Matrix& X, const std::vector<int>& labels) {
    const int C = detail::check_cluster_labels(labels, X.rows(), "davies_bouldin");
    Matrix cent = Matrix::Zero(C, X.cols());
    std::vector<double> count(static_cast<std::size_t>(C), 0.0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        cent.row(labels[i]) += X.row(i);
        count[static_cast<std::size_t>(labels[i])] += 1.0;
    }
    for (int c = 0; c < C; ++c) {
        cent.row(c) /= count[static_cast<std::size_t>(c)];
    }
    std::vector<double> scatter(static_cast<std::size_t>(C), 0.0);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        scatter[static_cast<std::size_t>(labels[i])] += (X.row(i) - cent.row(labels[i])).norm();
    }
    for (int c = 0; c < C; ++c) {
        scatter[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
    }
    bool floored = false;
    double total = 0.0;
    for (int i = 0; i < C; ++i) {
        double worst = 0.0;
        for (int j = 0; j < C; ++j) {
            if (i == j) {
                continue;
            }
            double d = (cent.row(i) - cent.row(j)).norm();
            if (d < kCentroidFloor) {
                d = kCentroidFloor;
                floored = true;
            }
            worst = std::max(worst, (scatter[static_cast<std::size_t>(i)] + scatter[static_cast<std::size_t>(j)]) / d);
        }
        total += worst;
    }
    if (floored) {
        log::warn("davies_bouldin: coincident centroids; separation floored");
    }
    return total / C;
}

struct CviSelection {
    std::vector<int> C_values;
    std::vector<double> silhouette;
    std::vector<double> davies_bouldin;
    std::vector<ClusterAssignment> assignments;
    int best_silhouette = 0;
    int best_davies_bouldin = 0;
    int chosen = 0;
};

/// Spectral clustering on a kNN graph of the points for every C in range;
/// the chosen count follows Davies-Bouldin.
inline CviSelection select_num_clusters(const Matrix& points, const std::vector<int>& C_range, Eigen::Index knn_k,
                                        std::uint64_t seed) {
    if (C_range.empty()) {
        throw ConfigError("select_num_clusters: empty cluster-count range");
    }
    const Eigen::Index n = points.rows();
    for (int C : C_range) {
        if (C < 2 || C >= n) {
            throw ConfigError("select_num_clusters: cluster counts must lie in [2, n)");
        }
    }
    const Matrix D = euclidean_distances(points);
    const Graph g = knn_graph_from_distances(D, knn_k);
    CviSelection out;
    double best_s = -std::numeric_limits<double>::infinity();
    double best_db = std::numeric_limits<double>::infinity();
    for (int C : C_range) {
        auto a = spectral_clustering(g, C, seed).assignment;
        const auto distinct = std::set<int>(a.labels.begin(), a.labels.end()).size();
        double s = -1.0, db = std::numeric_limits<double>::infinity();
        if (distinct >= 2) {
            auto compact = canonical_labels(a.labels);
            s = silhouette(D, compact.labels);
            db = davies_bouldin(points, compact.labels);
        }
        out.C_values.push_back(C);
        out.silhouette.push_back(s);
        out.davies_bouldin.push_back(db);
        out.assignments.push_back(std::move(a));
        if (s > best_s) {
            best_s = s;
            out.best_silhouette = C;
        }
        if (db < best_db) {
            best_db = db;
            out.best_davies_bouldin = C;
        }
    }
    if (out.best_davies_bouldin == 0) {
        out.best_davies_bouldin = C_range.front();
    }
    if (out.best_silhouette == 0) {
        out.best_silhouette = C_range.front();
    }
    out.chosen = out.best_davies_bouldin;
    return out;
}

/// Rand index corrected for chance.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw DataError("adjusted_rand_index: label lists differ in length");
    }
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [k, v] : joint) {
        sum_joint += c2(v);
    }
    for (const auto& [k, v] : ra) {
        sum_a += c2(v);
    }
    for (const auto& [k, v] : rb) {
        sum_b += c2(v);
    }
    const double expected = sum_a * sum_b / c2(static_cast<double>(a.size()));
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) {
        return 1.0;
    }
    return (sum_joint - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// t-SNE

struct TsneOptions {
    double perplexity = 30.0;
    int iters = 1000;
    double learning_rate = 200.0;
    int exaggeration_iters = 250;
    double exaggeration = 12.0;
    int momentum_switch = 250;
    double entropy_tol = 1e-5;
    int trace_every = 50;
};

struct Embedding2D {
    std::vector<std::string> ids;
    Matrix coords;
    std::vector<double> kl_trace;
    Vector achieved_perplexity;
};

/// Row-conditional Gaussian affinities with per-point precision fitted to
/// the target perplexity by bisection on the entropy (natural log).
inline Matrix conditional_affinities(const Matrix& D2, double perplexity, double entropy_tol, Vector* achieved = nullptr) {
    const Eigen::Index n = D2.rows();
    if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n))) {
        throw ConfigError("tsne: perplexity must satisfy 1 < perplexity < n (n=" + std::to_string(n) + ")");
    }
    const double target = std::log(perplexity);
    Matrix P = Matrix::Zero(n, n);
    if (achieved) {
        achieved->resize(n);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) {
                dmin = std::min(dmin, D2(i, j));
            }
        }
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        Vector row(n);
        double H = 0.0;
        for (int it = 0; it < 200; ++it) {
            double sum = 0.0, wsum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                row(j) = j == i ? 0.0 : std::exp(-beta * (D2(i, j) - dmin));
                sum += row(j);
                wsum += row(j) * (D2(i, j) - dmin);
            }
            H = std::log(sum) + beta * wsum / sum;
            row /= sum;
            const double diff = H - target;
            if (std::abs(diff) < entropy_tol) {
                break;
            }
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        P.row(i) = row.transpose();
        if (achieved) {
            (*achieved)(i) = std::exp(H);
        }
    }
    return P;
}

inline double tsne_kl(const Matrix& P, const Matrix& Y) {
    const Eigen::Index n = Y.rows();
    Matrix num(n, n);
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (Y.row(i) - Y.row(j)).squaredNorm());
            z += num(i, j);
        }
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (P(i, j) > 0.0) {
                kl += P(i, j) * std::log(P(i, j) / std::max(num(i, j) / z, 1e-300));
            }
        }
    }
    return std::max(kl, 0.0);
}

/// Exact t-SNE from squared distances.
inline Embedding2D tsne_from_squared(const Matrix& D2, const TsneOptions& opt, std::uint64_t seed) {
    const Eigen::Index n = D2.rows();
    if (opt.iters < 1) {
        throw ConfigError("tsne: iters must be >= 1");
    }
    if (!D2.allFinite()) {
        throw DataError("tsne: non-finite distances");
    }
    Embedding2D out;
    const Matrix Pc = conditional_affinities(D2, opt.perplexity, opt.entropy_tol, &out.achieved_perplexity);
    Matrix P = (Pc + Pc.transpose()) / (2.0 * static_cast<double>(n));
    P = P.cwiseMax(1e-12);
    P.diagonal().setZero();
    P /= P.sum();

    Rng rng(seed);
    Matrix Y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        Y(i, 0) = 1e-4 * rng.normal();
        Y(i, 1) = 1e-4 * rng.normal();
    }
    Matrix update = Matrix::Zero(n, 2);
    Matrix gains = Matrix::Ones(n, 2);
    Matrix num(n, n);
    for (int it = 0; it < opt.iters; ++it) {
        const double exag = it < opt.exaggeration_iters ? opt.exaggeration : 1.0;
        const double momentum = it < opt.momentum_switch ? 0.5 : 0.8;
        double z = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            num(i, i) = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                num(i, j) = num(j, i) = 1.0 / (1.0 + (Y.row(i) - Y.row(j)).squaredNorm());
                z += 2.0 * num(i, j);
            }
        }
        Matrix grad = Matrix::Zero(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (i != j) {
                    const double w = (exag * P(i, j) - num(i, j) / z) * num(i, j);
                    grad.row(i) += 4.0 * w * (Y.row(i) - Y.row(j));
                }
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index c = 0; c < 2; ++c) {
                const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
                gains(i, c) = same ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
            }
        }
        update = momentum * update - opt.learning_rate * gains.cwiseProduct(grad);
        Y += update;
        Y.rowwise() -= Y.colwise().mean();
        if ((it + 1) % opt.trace_every == 0 || it + 1 == opt.iters) {
            out.kl_trace.push_back(tsne_kl(P, Y));
        }
    }
    if (!Y.allFinite()) {
        throw NumericError("tsne: embedding diverged");
    }
    out.coords = Y;
    return out;
}

inline Embedding2D tsne(const Matrix& X, const TsneOptions& opt, std::uint64_t seed) {
    const Matrix D = euclidean_distances(X);
    return tsne_from_squared(D.cwiseProduct(D), opt, seed);
}

inline Embedding2D tsne(const DistanceMatrix& D, const TsneOptions& opt, std::uint64_t seed) {
    check_square_symmetric(D.values, "tsne");
    auto e = tsne_from_squared(D.values.cwiseProduct(D.values), opt, seed);
    e.ids = D.row_ids;
    return e;
}

// ---------------------------------------------------------------------------
// Density estimation

/// 0.9 min(sd, IQR/1.34) n^(-1/5); falls back to sd when the IQR is zero.
inline double silverman_bandwidth(const std::vector<double>& samples) {
    if (samples.size() < 2) {
        throw DataError("parzen_pdf: needs at least 2 samples");
    }
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : samples) {
        ss += (x - mean) * (x - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    const double iqr = quantile(samples, 0.75) - quantile(samples, 0.25);
    double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
    if (!(spread > 0.0)) {
        throw DataError("parzen_pdf: degenerate bandwidth (samples have zero spread)");
    }
    return 0.9 * spread * std::pow(n, -0.2);
}

inline std::vector<double> parzen_pdf(const std::vector<double>& samples, const std::vector<double>& grid,
                                      double* bandwidth = nullptr) {
    const double h = silverman_bandwidth(samples);
    if (bandwidth) {
        *bandwidth = h;
    }
    const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> out;
    out.reserve(grid.size());
    for (double g : grid) {
        double s = 0.0;
        for (double x : samples) {
            const double u = (g - x) / h;
            s += std::exp(-0.5 * u * u);
        }
        out.push_back(norm * s);
    }
    return out;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> g(count);
    for (std::size_t i = 0; i < count; ++i) {
        g[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Cluster characterization

struct BinaryFeatureProfile {
    std::string feature;
    std::size_t active = 0;
    std::size_t active_positive = 0;
    double pct_active = 0.0;
    double pct_active_positive = 0.0; // share of the cluster that is active and label 1
    double pct_active_negative = 0.0;
};

struct StaticPdf {
    std::string name;
    double bandwidth = 0.0;
    std::vector<double> grid;
    std::vector<double> density;
};

struct ClusterProfile {
    int cluster = 0;
    std::size_t size = 0;
    double pct_size = 0.0;
    std::size_t positives = 0;
    double pct_positive = 0.0;
    std::vector<BinaryFeatureProfile> binary;
    std::map<std::string, std::map<std::string, double>> categorical; // static -> value -> percent
    std::vector<StaticPdf> pdfs;
};

struct StratReport {
    std::size_t n = 0;
    int C = 0;
    std::vector<ClusterProfile> clusters;
    std::vector<std::string> notes;
};

inline constexpr std::size_t kPdfGridPoints = 200;

/// A record activates a binary feature when any observed cell equals 1.
inline StratReport cluster_profile(const Dataset& ds, const ClusterAssignment& a) {
    if (a.labels.size() != ds.size()) {
        throw DataError("cluster_profile: " + std::to_string(a.labels.size()) + " labels for " +
                        std::to_string(ds.size()) + " records");
    }
    StratReport rep;
    rep.n = ds.size();
    rep.C = a.C;
    for (int l : a.labels) {
        if (l < 0 || l >= a.C) {
            throw DataError("cluster_profile: cluster index " + std::to_string(l) + " outside [0, C)");
        }
    }
    std::set<std::string> static_names;
    for (const auto& r : ds.records) {
        for (const auto& [k, v] : r.statics) {
            static_names.insert(k);
        }
    }
    if (static_names.empty()) {
        rep.notes.push_back("no static variables; categorical and density sections omitted");
    }
    for (int c = 0; c < a.C; ++c) {
        ClusterProfile p;
        p.cluster = c;
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (a.labels[i] == c) {
                members.push_back(i);
            }
        }
        p.size = members.size();
        p.pct_size = rep.n ? 100.0 * static_cast<double>(p.size) / static_cast<double>(rep.n) : 0.0;
        for (auto i : members) {
            p.positives += ds.records[i].label == 1;
        }
        const double denom = p.size ? static_cast<double>(p.size) : 1.0;
        p.pct_positive = 100.0 * static_cast<double>(p.positives) / denom;
        for (Eigen::Index f = 0; f < ds.num_features(); ++f) {
            if (ds.kinds[static_cast<std::size_t>(f)] != FeatureKind::Binary) {
                continue;
            }
            BinaryFeatureProfile b;
            b.feature = ds.feature_names[static_cast<std::size_t>(f)];
            for (auto i : members) {
                const auto& r = ds.records[i];
                bool any = false;
                for (Eigen::Index t = 0; t < r.length() && !any; ++t) {
                    any = r.mask(f, t) && !r.padded(f, t) && r.values(f, t) == 1.0;
                }
                if (any) {
                    ++b.active;
                    b.active_positive += r.label == 1;
                }
            }
            b.pct_active = 100.0 * static_cast<double>(b.active) / denom;
            b.pct_active_positive = 100.0 * static_cast<double>(b.active_positive) / denom;
            b.pct_active_negative = 100.0 * static_cast<double>(b.active - b.active_positive) / denom;
            p.binary.push_back(b);
        }
        for (const auto& name : static_names) {
            std::vector<double> numeric;
            std::map<std::string, double> counts;
            std::size_t present = 0;
            for (auto i : members) {
                const auto& st = ds.records[i].statics;
                auto it = st.find(name);
                if (it == st.end()) {
                    continue;
                }
                ++present;
                if (const auto* d = std::get_if<double>(&it->second)) {
                    numeric.push_back(*d);
                } else {
                    counts[std::get<std::string>(it->second)] += 1.0;
                }
            }
            if (!counts.empty()) {
                for (auto& [k, v] : counts) {
                    v = 100.0 * v / static_cast<double>(present);
                }
                p.categorical[name] = counts;
            }
            if (!numeric.empty()) {
                try {
                    StaticPdf pdf;
                    pdf.name = name;
                    const double h = silverman_bandwidth(numeric);
                    const auto [lo, hi] = std::minmax_element(numeric.begin(), numeric.end());
                    pdf.grid = linspace(*lo - 5.0 * h, *hi + 5.0 * h, kPdfGridPoints);
                    pdf.density = parzen_pdf(numeric, pdf.grid, &pdf.bandwidth);
                    p.pdfs.push_back(std::move(pdf));
                } catch (const DataError& e) {
                    rep.notes.push_back("cluster " + std::to_string(c) + " static '" + name + "': " + e.what());
                }
            }
        }
        rep.clusters.push_back(std::move(p));
    }
    return rep;
}

inline nlohmann::json strat_report_to_json(const StratReport& r) {
    nlohmann::json j;
    j["format"] = "mts-strat-report";
    j["version"] = 1;
    j["n"] = r.n;
    j["C"] = r.C;
    j["notes"] = r.notes;
    j["clusters"] = nlohmann::json::array();
    for (const auto& c : r.clusters) {
        nlohmann::json cj{{"cluster", c.cluster},     {"size", c.size},
                          {"pct_size", c.pct_size},   {"positives", c.positives},
                          {"pct_positive", c.pct_positive}};
        cj["binary"] = nlohmann::json::array();
        for (const auto& b : c.binary) {
            cj["binary"].push_back({{"feature", b.feature},
                                    {"active", b.active},
                                    {"active_positive", b.active_positive},
                                    {"pct_active", b.pct_active},
                                    {"pct_active_positive", b.pct_active_positive},
                                    {"pct_active_negative", b.pct_active_negative}});
        }
        cj["categorical"] = c.categorical;
        cj["pdfs"] = nlohmann::json::array();
        for (const auto& p : c.pdfs) {
            cj["pdfs"].push_back({{"name", p.name}, {"bandwidth", p.bandwidth}, {"grid", p.grid}, {"density", p.density}});
        }
        j["clusters"].push_back(std::move(cj));
    }
    return j;
}

/// Writes strat_report.json and the profile CSVs; returns the paths.
inline std::vector<std::filesystem::path> write_strat_report(const StratReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto open = [&](const std::string& name) {
        written.push_back(dir / name);
        std::ofstream out(written.back());
        if (!out) {
            throw DataError("write error: cannot open " + written.back().string());
        }
        return out;
    };
    {
        auto out = open("strat_report.json");
        out << strat_report_to_json(r).dump(2) << '\n';
    }
    {
        auto out = open("profile_sizes.csv");
        out << "cluster,size,pct_size,positives,pct_positive\n";
        for (const auto& c : r.clusters) {
            out << c.cluster << ',' << c.size << ',' << format_double(c.pct_size) << ',' << c.positives << ','
                << format_double(c.pct_positive) << '\n';
        }
    }
    {
        auto out = open("profile_binary.csv");
        out << "cluster,feature,active,active_positive,pct_active,pct_active_positive,pct_active_negative\n";
        for (const auto& c : r.clusters) {
            for (const auto& b : c.binary) {
                out << c.cluster << ',' << b.feature << ',' << b.active << ',' << b.active_positive << ','
                    << format_double(b.pct_active) << ',' << format_double(b.pct_active_positive) << ','
                    << format_double(b.pct_active_negative) << '\n';
            }
        }
    }
    {
        auto out = open("profile_categorical.csv");
        out << "cluster,static,value,pct\n";
        for (const auto& c : r.clusters) {
            for (const auto& [name, dist] : c.categorical) {
                for (const auto& [v, pct] : dist) {
                    out << c.cluster << ',' << name << ',' << v << ',' << format_double(pct) << '\n';
                }
            }
        }
    }
    {
        auto out = open("profile_pdf.csv");
        out << "cluster,static,x,density\n";
        for (const auto& c : r.clusters) {
            for (const auto& p : c.pdfs) {
                for (std::size_t i = 0; i < p.grid.size(); ++i) {
                    out << c.cluster << ',' << p.name << ',' << format_double(p.grid[i]) << ','
                        << format_double(p.density[i]) << '\n';
                }
            }
        }
    }
    return written;
}

inline void write_embedding_csv(const std::filesystem::path& path, const Embedding2D& e, const std::vector<int>& clusters,
                                const std::vector<int>& labels) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    out << "id,x,y,cluster,label\n";
    for (Eigen::Index i = 0; i < e.coords.rows(); ++i) {
        out << (static_cast<std::size_t>(i) < e.ids.size() ? e.ids[i] : std::to_string(i)) << ','
            << format_double(e.coords(i, 0)) << ',' << format_double(e.coords(i, 1)) << ','
            << (static_cast<std::size_t>(i) < clusters.size() ? clusters[i] : -1) << ','
            << (static_cast<std::size_t>(i) < labels.size() ? labels[i] : -1) << '\n';
    }
}

inline void write_cvi_csv(const std::filesystem::path& path, const CviSelection& s) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("write error: cannot open " + path.string());
    }
    out << "C,silhouette,davies_bouldin\n";
    for (std::size_t i = 0; i < s.C_values.size(); ++i) {
        out << s.C_values[i] << ',' << format_double(s.silhouette[i]) << ',' << format_double(s.davies_bouldin[i])
            << '\n';
    }
}

} // namespace mtsstrat

#endif
