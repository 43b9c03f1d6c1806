#include "mcam/refine.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "mcam/parallel.hpp"

namespace mcam {

namespace {

constexpr int kChunks = 16;  // fixed reduction width, independent of threads

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// squashed controls plus the jacobian entries that survive the projection
struct SquashOut {
    double a = 0, s = 0, l = 0;
    double da_dra = 0, ds_drs = 0, dl_drs = 0, dl_drl = 0;
};

SquashOut squash_control(const Model& m, double x, const double raw[3]) {
    SquashOut o;
    double sa = sigmoid(raw[0]);
    o.a = m.Ma + (1.0 - m.Ma) * sa;
    o.da_dra = (1.0 - m.Ma) * sa * (1.0 - sa);
    if (x <= m.K) return o;  // floor: s = l = 0, heads frozen

    double ss = sigmoid(raw[1]);
    o.s = m.Ms * ss;
    o.ds_drs = m.Ms * ss * (1.0 - ss);

    double sl = sigmoid(raw[2]);
    if (sl >= PolicyNet::kDeadZone) {
        o.l = m.Ml + (1.0 - m.Ml) * sl;
        o.dl_drl = (1.0 - m.Ml) * sl * (1.0 - sl);
        if (o.s + o.l > 1.0) {  // dividends absorb the joint constraint
            o.l = 1.0 - o.s;
            o.dl_drl = 0.0;
            o.dl_drs = -o.ds_drs;
            if (o.l < m.Ml) {  // only reachable when Ms + Ml > 1
                o.l = 0.0;
                o.dl_drs = 0.0;
            }
        }
    }
    return o;
}

}  // namespace

// Layer access and hand-rolled reverse pass; kept out of the public header.
struct NetOps {
    static void forward(const PolicyNet& n, double x, int regime, double* h1, double* h2,
                        double* raw) {
        constexpr int W = PolicyNet::kWidth;
        const double* th = n.theta_.data();
        const int in = 1 + n.m0_;
        const double x0 = x / n.x_scale_;
        const double* W1 = th + n.w1_;
        const double* B1 = th + n.b1_;
        for (int i = 0; i < W; ++i)
            h1[i] = std::tanh(W1[i * in] * x0 + W1[i * in + 1 + regime] + B1[i]);
        const double* W2 = th + n.w2_;
        const double* B2 = th + n.b2_;
        for (int i = 0; i < W; ++i) {
            double acc = B2[i];
            const double* row = W2 + i * W;
            for (int j = 0; j < W; ++j) acc += row[j] * h1[j];
            h2[i] = std::tanh(acc);
        }
        const double* W3 = th + n.w3_;
        const double* B3 = th + n.b3_;
        for (int h = 0; h < 3; ++h) {
            double acc = B3[h];
            const double* row = W3 + h * W;
            for (int j = 0; j < W; ++j) acc += row[j] * h2[j];
            raw[h] = acc;
        }
    }

    // accumulates d(loss)/d(theta) into g given d(loss)/d(raw)
    static void backward(const PolicyNet& n, double x, int regime, const double* h1,
                         const double* h2, const double* draw, double* g) {
        constexpr int W = PolicyNet::kWidth;
        const double* th = n.theta_.data();
        const int in = 1 + n.m0_;
        const double x0 = x / n.x_scale_;
        const double* W3 = th + n.w3_;

        double dh2[W];
        for (int j = 0; j < W; ++j)
            dh2[j] = W3[j] * draw[0] + W3[W + j] * draw[1] + W3[2 * W + j] * draw[2];
        for (int h = 0; h < 3; ++h) {
            if (draw[h] == 0.0) continue;
            double* gw = g + n.w3_ + h * W;
            for (int j = 0; j < W; ++j) gw[j] += draw[h] * h2[j];
            g[n.b3_ + h] += draw[h];
        }

        double dp2[W], dh1[W];
        for (int j = 0; j < W; ++j) {
            dp2[j] = dh2[j] * (1.0 - h2[j] * h2[j]);
            dh1[j] = 0.0;
        }
        const double* W2 = th + n.w2_;
        for (int i = 0; i < W; ++i) {
            double d = dp2[i];
            if (d == 0.0) continue;
            double* gw = g + n.w2_ + i * W;
            const double* row = W2 + i * W;
            for (int j = 0; j < W; ++j) {
                gw[j] += d * h1[j];
                dh1[j] += row[j] * d;
            }
            g[n.b2_ + i] += d;
        }
        for (int i = 0; i < W; ++i) {
            double d = dh1[i] * (1.0 - h1[i] * h1[i]);
            g[n.w1_ + i * in] += d * x0;
            g[n.w1_ + i * in + 1 + regime] += d;
            g[n.b1_ + i] += d;
        }
    }

    static void set_head(PolicyNet& n, int head, const double* w, double bias) {
        constexpr int W = PolicyNet::kWidth;
        double* th = n.theta_.data();
        for (int j = 0; j < W; ++j) th[n.w3_ + head * W + j] = w[j];
        th[n.b3_ + head] = bias;
    }
};

PolicyNet::PolicyNet(int m0, double x_scale, uint64_t seed) : m0_(m0), x_scale_(x_scale) {
    if (m0 < 1) throw DomainError("net needs at least one regime");
    if (!(x_scale > 0.0)) throw DomainError("x normalization scale must be positive");
    const int in = 1 + m0;
    w1_ = 0;
    b1_ = w1_ + kWidth * in;
    w2_ = b1_ + kWidth;
    b2_ = w2_ + kWidth * kWidth;
    w3_ = b2_ + kWidth;
    b3_ = w3_ + 3 * kWidth;
    theta_.assign(static_cast<size_t>(b3_) + 3, 0.0);

    // wide uniform fan-in/fan-out init on the weight matrices, zero biases;
    // the large gain spreads the tanh features so the head solve has rank
    std::mt19937_64 rng(seed);
    auto fill = [&](int off, int rows, int cols) {
        double lim = 6.0 * std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> d(-lim, lim);
        for (int i = 0; i < rows * cols; ++i) theta_[off + i] = d(rng);
    };
    fill(w1_, kWidth, in);
    fill(w2_, kWidth, kWidth);
    fill(w3_, 3, kWidth);
}

void PolicyNet::raw_heads(double x, int regime, double out[3]) const {
    if (regime < 0 || regime >= m0_) throw IndexError("regime index out of range");
    double h1[kWidth], h2[kWidth];
    NetOps::forward(*this, x, regime, h1, h2, out);
}

Control PolicyNet::forward(const Model& m, const State& st) const {
    double raw[3];
    raw_heads(st.x, st.regime, raw);
    SquashOut o = squash_control(m, st.x, raw);
    return {o.a, o.s, o.l};
}

std::string PolicyNet::to_json() const {
    nlohmann::json j;
    j["width"] = kWidth;
    j["m0"] = m0_;
    j["x_scale"] = x_scale_;
    j["dead_zone"] = kDeadZone;
    const int in = 1 + m0_;
    auto slice = [&](int off, int count) {
        return std::vector<double>(theta_.begin() + off, theta_.begin() + off + count);
    };
    j["w1"] = slice(w1_, kWidth * in);
    j["b1"] = slice(b1_, kWidth);
    j["w2"] = slice(w2_, kWidth * kWidth);
    j["b2"] = slice(b2_, kWidth);
    j["w3"] = slice(w3_, 3 * kWidth);
    j["b3"] = slice(b3_, 3);
    return j.dump(1);
}

PolicyNet PolicyNet::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (!j.contains("width") || j["width"].get<int>() != kWidth)
        throw ConfigError("checkpoint width does not match this build");
    int m0 = j.at("m0").get<int>();
    double xs = j.at("x_scale").get<double>();
    PolicyNet net(m0, xs, 0);
    const int in = 1 + m0;
    auto read = [&](const char* key, int off, int count) {
        auto v = j.at(key).get<std::vector<double>>();
        if (static_cast<int>(v.size()) != count)
            throw ConfigError(std::string("checkpoint field ") + key + " has the wrong size");
        std::copy(v.begin(), v.end(), net.theta_.begin() + off);
    };
    read("w1", net.w1_, kWidth * in);
    read("b1", net.b1_, kWidth);
    read("w2", net.w2_, kWidth * kWidth);
    read("b2", net.b2_, kWidth);
    read("w3", net.w3_, 3 * kWidth);
    read("b3", net.b3_, 3);
    return net;
}

void PolicyNet::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out << to_json() << "\n";
    if (!out.good()) throw ConfigError("checkpoint write failed: " + path);
}

PolicyNet PolicyNet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

namespace {

struct FitProblem {
    const Model* model = nullptr;
    const Grid* grid = nullptr;
    const TabularPolicy* targets = nullptr;
    std::vector<int> nodes;  // interior node indices
    int m0 = 1;

    int samples() const { return static_cast<int>(nodes.size()) * m0; }
    // sample index -> (node, regime); regime varies fastest
    void locate(int k, int& node, int& regime) const {
        node = nodes[k / m0];
        regime = k % m0;
    }
};

FitProblem make_fit_problem(const Model& m, const Grid& g, const TabularPolicy& targets) {
    if (targets.nodes() != static_cast<int>(g.size()) || targets.m0 != m.m0())
        throw DomainError("target policy table does not match the grid and model");
    FitProblem p;
    p.model = &m;
    p.grid = &g;
    p.targets = &targets;
    p.m0 = m.m0();
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        if (!g.is_boundary(i)) p.nodes.push_back(i);
    if (p.nodes.empty()) throw DomainError("grid has no interior nodes to fit");
    return p;
}

// mean squared control deviation over samples; optionally accumulates the
// theta gradient.  Chunk partials are combined in chunk order so the result
// does not depend on the thread count.
double fit_eval(const PolicyNet& net, const FitProblem& p, ThreadPool& pool,
                std::vector<double>* grad_out) {
    const int ns = p.samples();
    const double scale = 1.0 / (3.0 * ns);
    std::vector<double> part_loss(kChunks, 0.0);
    std::vector<std::vector<double>> part_grad;
    if (grad_out) part_grad.assign(kChunks, std::vector<double>(net.param_count(), 0.0));

    pool.for_chunks(ns, kChunks, [&](long lo, long hi, int chunk) {
        double acc = 0.0;
        double* g = grad_out ? part_grad[chunk].data() : nullptr;
        double h1[PolicyNet::kWidth], h2[PolicyNet::kWidth], raw[3], draw[3];
        for (int k = static_cast<int>(lo); k < hi; ++k) {
            int node, regime;
            p.locate(k, node, regime);
            const double x = p.grid->x(node);
            NetOps::forward(net, x, regime, h1, h2, raw);
            SquashOut o = squash_control(*p.model, x, raw);
            const Control t = p.targets->at(node, regime);
            const double da = o.a - t.a, ds = o.s - t.s, dl = o.l - t.l;
            acc += (da * da + ds * ds + dl * dl) * scale;
            if (g) {
                draw[0] = 2.0 * scale * da * o.da_dra;
                draw[1] = 2.0 * scale * (ds * o.ds_drs + dl * o.dl_drs);
                draw[2] = 2.0 * scale * dl * o.dl_drl;
                NetOps::backward(net, x, regime, h1, h2, draw, g);
            }
        }
        part_loss[chunk] = acc;
    });

    double loss = 0.0;
    for (double v : part_loss) loss += v;
    if (grad_out) {
        std::fill(grad_out->begin(), grad_out->end(), 0.0);
        for (int c = 0; c < kChunks; ++c)
            for (size_t i = 0; i < grad_out->size(); ++i) (*grad_out)[i] += part_grad[c][i];
    }
    return loss;
}

double fit_max_abs(const PolicyNet& net, const FitProblem& p) {
    double worst = 0.0;
    double h1[PolicyNet::kWidth], h2[PolicyNet::kWidth], raw[3];
    for (int k = 0; k < p.samples(); ++k) {
        int node, regime;
        p.locate(k, node, regime);
        const double x = p.grid->x(node);
        NetOps::forward(net, x, regime, h1, h2, raw);
        SquashOut o = squash_control(*p.model, x, raw);
        const Control t = p.targets->at(node, regime);
        worst = std::max({worst, std::abs(o.a - t.a), std::abs(o.s - t.s), std::abs(o.l - t.l)});
    }
    return worst;
}

// Refit the output heads by ridge least squares on the current trunk
// features, targeting pre-squash values recovered from the tabular policy.
// This snaps the heads near the optimum so gradient descent only polishes.
void ls_head_init(PolicyNet& net, const FitProblem& p) {
    constexpr int W = PolicyNet::kWidth;
    const Model& m = *p.model;
    const int ns = p.samples();

    Eigen::MatrixXd phi(ns, W + 1);
    std::vector<char> above(ns, 0);
    Eigen::VectorXd ya(ns), ys(ns), yl(ns);
    auto raw_target = [](double frac) {
        return logit(std::clamp(frac, 0.0025, 0.9975));
    };
    double h1[W], h2[W], raw[3];
    for (int k = 0; k < ns; ++k) {
        int node, regime;
        p.locate(k, node, regime);
        const double x = p.grid->x(node);
        NetOps::forward(net, x, regime, h1, h2, raw);
        for (int j = 0; j < W; ++j) phi(k, j) = h2[j];
        phi(k, W) = 1.0;
        above[k] = x > m.K ? 1 : 0;
        const Control t = p.targets->at(node, regime);
        ya(k) = m.Ma < 1.0 ? raw_target((t.a - m.Ma) / (1.0 - m.Ma)) : 0.0;
        ys(k) = m.Ms > 0.0 ? raw_target(t.s / m.Ms) : 0.0;
        if (t.l == 0.0)
            yl(k) = -6.0;  // park inside the dead zone
        else
            yl(k) = m.Ml < 1.0 ? raw_target((t.l - m.Ml) / (1.0 - m.Ml)) : 6.0;
    }

    auto solve_head = [&](int head, const Eigen::VectorXd& y, bool masked) {
        std::vector<int> rows;
        rows.reserve(ns);
        for (int k = 0; k < ns; ++k)
            if (!masked || above[k]) rows.push_back(k);
        if (rows.empty()) return;
        Eigen::MatrixXd A(static_cast<int>(rows.size()), W + 1);
        Eigen::VectorXd b(static_cast<int>(rows.size()));
        for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
            A.row(r) = phi.row(rows[r]);
            b(r) = y(rows[r]);
        }
        Eigen::MatrixXd G = A.transpose() * A;
        G.diagonal().array() += 1e-6;
        Eigen::VectorXd w = G.ldlt().solve(A.transpose() * b);
        NetOps::set_head(net, head, w.data(), w(W));
    };
    solve_head(0, ya, false);
    solve_head(1, ys, true);  // s and l are forced to zero at or below K,
    solve_head(2, yl, true);  // so those rows carry no head information
}

}  // namespace

FitReport fit_to_tabular(PolicyNet& net, const Model& m, const Grid& coarse,
                         const TabularPolicy& targets, const TrainConfig& cfg) {
    FitProblem p = make_fit_problem(m, coarse, targets);
    ThreadPool pool(cfg.threads > 0 ? cfg.threads : default_threads());

    ls_head_init(net, p);

    std::vector<double>& theta = net.raw_params();
    std::vector<double> grad(net.param_count(), 0.0);
    double loss = fit_eval(net, p, pool, &grad);
    if (!std::isfinite(loss)) throw DivergenceError("initial fit loss is not finite");

    double step = cfg.h1;
    FitReport rep;
    std::vector<double> saved;
    for (int epoch = 0; epoch < cfg.max_epochs_fit; ++epoch) {
        rep.epochs = epoch + 1;
        saved = theta;
        for (size_t i = 0; i < theta.size(); ++i) theta[i] -= step * grad[i];
        double trial = fit_eval(net, p, pool, nullptr);
        if (!std::isfinite(trial))
            throw DivergenceError("fit loss became non-finite; try a smaller h1");
        if (trial <= loss) {
            double gained = loss - trial;
            loss = trial;
            if (gained < cfg.epsilon3) {
                rep.converged = true;
                break;
            }
            fit_eval(net, p, pool, &grad);
        } else {
            theta = saved;  // reject and retry smaller
            step *= 0.5;
            if (step < 1e-14) {
                rep.converged = true;
                break;
            }
        }
    }
    rep.mse = loss;
    rep.final_h1 = step;
    rep.max_abs_dev = fit_max_abs(net, p);
    return rep;
}

std::pair<double, std::vector<double>> fit_loss_grad(const PolicyNet& net, const Model& m,
                                                     const Grid& coarse,
                                                     const TabularPolicy& targets) {
    FitProblem p = make_fit_problem(m, coarse, targets);
    ThreadPool pool;
    std::vector<double> grad(net.param_count(), 0.0);
    double loss = fit_eval(net, p, pool, &grad);
    return {loss, std::move(grad)};
}

namespace {

// One-step lookahead value of control u at (x, regime) on the fine grid,
// with optional derivatives in (a, s, l).  Matches the transition-row
// arithmetic used by the solver; extreme nodes take ghost neighbors.
struct BackupTerms {
    double S = 0;
    double dS[3] = {0, 0, 0};
};

BackupTerms backup_terms(const Model& m, double h, double x, int regime, const Control& u,
                         double v_up, double v_down, const double* v_here, const RewardFn& fo,
                         double gamma, bool with_grad) {
    const RegimeParams& rp = m.regimes[regime];
    const double mu = rp.lambda * m.ey;
    const double sc2 = rp.lambda * m.ey2;
    const double above = std::max(x - m.K, 0.0);

    const double b = (1.0 + m.rho) * mu - (1.0 + m.beta) * (1.0 - u.a) * mu - u.a * mu +
                     (u.s * rp.r1 + (1.0 - u.s - u.l) * m.r2 - u.l) * above;
    const double vol = u.s * rp.sigma_s * above;
    const double s2 = u.a * u.a * sc2 + vol * vol;
    const double f = fo ? fo(m, {x, regime}, u) : b + u.l * above;

    const double bp = b > 0.0 ? b : 0.0;
    const double bn = b < 0.0 ? -b : 0.0;
    const double D = s2 + h * (bp + bn) - h * h * m.q_at(regime, regime);
    const double num_up = 0.5 * s2 + h * bp;
    const double num_dn = 0.5 * s2 + h * bn;
    const double dt = h * h / D;

    double swq = 0.0;  // sum over other regimes of q(regime, j) * V(x, j)
    for (int j = 0; j < m.m0(); ++j)
        if (j != regime) swq += m.q_at(regime, j) * v_here[j];

    BackupTerms out;
    out.S = (num_up * v_up + num_dn * v_down + h * h * swq) / D + (f - gamma) * dt;
    if (!with_grad) return out;

    const double db[3] = {m.beta * mu, (rp.r1 - m.r2) * above, -(1.0 + m.r2) * above};
    const double ds2[3] = {2.0 * u.a * sc2, 2.0 * u.s * rp.sigma_s * rp.sigma_s * above * above,
                           0.0};
    double df[3] = {db[0], db[1], db[2] + above};
    if (fo) df[0] = df[1] = df[2] = 0.0;  // injected rewards are control-free

    const double sgn = b > 0.0 ? 1.0 : (b < 0.0 ? -1.0 : 0.0);
    const double ipos = b > 0.0 ? 1.0 : 0.0;
    const double ineg = b < 0.0 ? 1.0 : 0.0;
    for (int z = 0; z < 3; ++z) {
        const double dD = ds2[z] + h * sgn * db[z];
        const double dnum_up = 0.5 * ds2[z] + h * ipos * db[z];
        const double dnum_dn = 0.5 * ds2[z] - h * ineg * db[z];
        const double inv2 = 1.0 / (D * D);
        const double dpu = (dnum_up * D - num_up * dD) * inv2;
        const double dpd = (dnum_dn * D - num_dn * dD) * inv2;
        const double ddt = -h * h * dD * inv2;
        out.dS[z] =
            dpu * v_up + dpd * v_down - h * h * swq * dD * inv2 + df[z] * dt + (f - gamma) * ddt;
    }
    return out;
}

// The mean runs over interior nodes: the two extreme nodes are reflection
// artifacts of the truncation (zero holding time, no controlled dynamics),
// not backup states.
struct ObjectiveLayout {
    int n = 0;        // node count including the extremes
    int m0 = 1;
    int interior = 0;  // n - 2
};

ObjectiveLayout make_layout(const Model& m, const Grid& fine, const ValueTable& v) {
    if (v.nodes() != static_cast<int>(fine.size()) || v.m0 != m.m0())
        throw DomainError("value table does not match the grid and model");
    ObjectiveLayout lay;
    lay.n = static_cast<int>(fine.size());
    lay.m0 = m.m0();
    lay.interior = lay.n - 2;
    if (lay.interior < 1) throw DomainError("grid has no interior nodes");
    return lay;
}

}  // namespace

double global_objective(const Model& m, const Grid& fine, const ValueTable& v,
                        const std::function<Control(const State&)>& policy,
                        const RewardFn& f_override, double gamma) {
    ObjectiveLayout lay = make_layout(m, fine, v);
    const double h = fine.h;
    std::vector<double> v_here(lay.m0);
    double total = 0.0;
    for (int i = 1; i + 1 < lay.n; ++i) {
        const double x = fine.x(i);
        for (int r = 0; r < lay.m0; ++r) v_here[r] = v.at(i, r);
        for (int r = 0; r < lay.m0; ++r) {
            const State st{x, r};
            const Control u = policy(st);
            if (!is_admissible(m, st, u))
                throw DomainError("policy produced an inadmissible control");
            total += backup_terms(m, h, x, r, u, v.at(i + 1, r), v.at(i - 1, r), v_here.data(),
                                  f_override, gamma, false)
                         .S;
        }
    }
    return total / (static_cast<double>(lay.interior) * lay.m0);
}

double global_objective(const Model& m, const Grid& fine, const ValueTable& v,
                        const PolicyNet& net, const RewardFn& f_override, double gamma) {
    return global_objective(
        m, fine, v, [&](const State& st) { return net.forward(m, st); }, f_override, gamma);
}

std::pair<double, std::vector<double>> objective_grad(const PolicyNet& net, const Model& m,
                                                      const Grid& fine, const ValueTable& v,
                                                      const RewardFn& f_override, int threads,
                                                      double gamma) {
    ObjectiveLayout lay = make_layout(m, fine, v);
    const double h = fine.h;
    const double scale = 1.0 / (static_cast<double>(lay.interior) * lay.m0);

    ThreadPool pool(threads);
    std::vector<double> part_g(kChunks, 0.0);
    std::vector<std::vector<double>> part_grad(kChunks,
                                               std::vector<double>(net.param_count(), 0.0));

    pool.for_chunks(lay.interior, kChunks, [&](long lo, long hi, int chunk) {
        double acc = 0.0;
        double* g = part_grad[chunk].data();
        double h1[PolicyNet::kWidth], h2[PolicyNet::kWidth], raw[3], draw[3];
        std::vector<double> v_here(lay.m0);
        for (int i = static_cast<int>(lo) + 1; i < hi + 1; ++i) {
            const double x = fine.x(i);
            for (int r = 0; r < lay.m0; ++r) v_here[r] = v.at(i, r);
            for (int r = 0; r < lay.m0; ++r) {
                NetOps::forward(net, x, r, h1, h2, raw);
                SquashOut o = squash_control(m, x, raw);
                const Control u{o.a, o.s, o.l};
                BackupTerms bt = backup_terms(m, h, x, r, u, v.at(i + 1, r), v.at(i - 1, r),
                                              v_here.data(), f_override, gamma, true);
                acc += bt.S * scale;
                draw[0] = scale * bt.dS[0] * o.da_dra;
                draw[1] = scale * (bt.dS[1] * o.ds_drs + bt.dS[2] * o.dl_drs);
                draw[2] = scale * bt.dS[2] * o.dl_drl;
                NetOps::backward(net, x, r, h1, h2, draw, g);
            }
        }
        part_g[chunk] = acc;
    });

    double g_val = 0.0;
    for (double vv : part_g) g_val += vv;
    std::vector<double> grad(net.param_count(), 0.0);
    for (int c = 0; c < kChunks; ++c)
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += part_grad[c][i];
    return {g_val, std::move(grad)};
}

AscendReport ascend(PolicyNet& net, const Model& m, const Grid& fine, const ValueTable& v,
                    const TrainConfig& cfg, const RewardFn& f_override, double gamma) {
    std::vector<double> grad =
        objective_grad(net, m, fine, v, f_override, cfg.threads, gamma).second;
    // acceptance bookkeeping sticks to one summation order throughout
    double g_val = global_objective(m, fine, v, net, f_override, gamma);
    if (!std::isfinite(g_val)) throw DivergenceError("initial objective is not finite");

    AscendReport rep;
    rep.g_start = g_val;
    rep.trace.push_back(g_val);
    double step = cfg.h1;
    std::vector<double>& theta = net.raw_params();
    std::vector<double> saved;
    for (int epoch = 0; epoch < cfg.max_epochs_ascend; ++epoch) {
        rep.epochs = epoch + 1;
        saved = theta;
        for (size_t i = 0; i < theta.size(); ++i) theta[i] += step * grad[i];
        double trial = global_objective(m, fine, v, net, f_override, gamma);
        if (!std::isfinite(trial))
            throw DivergenceError("objective became non-finite; try a smaller h1");
        if (trial >= g_val) {
            double gained = trial - g_val;
            g_val = trial;
            ++rep.accepted;
            rep.trace.push_back(g_val);
            if (gained < cfg.epsilon4) break;
            grad = objective_grad(net, m, fine, v, f_override, cfg.threads, gamma).second;
        } else {
            theta = saved;
            step *= 0.5;
            if (step < 1e-14) break;
        }
    }
    rep.g_final = g_val;
    rep.final_h1 = step;
    return rep;
}

TabularPolicy restrict_to_grid(const PolicyNet& net, const Model& m, const Grid& g) {
    TabularPolicy pol;
    pol.m0 = m.m0();
    pol.u.resize(g.size() * pol.m0);
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int r = 0; r < pol.m0; ++r) pol.u[i * pol.m0 + r] = net.forward(m, {g.x(i), r});
    return pol;
}

PolicyValues solve_policy_values(const Model& m, const Grid& g, const TabularPolicy& pol,
                                 const SolverConfig& cfg, const RewardFn& fo) {
    PolicyChain chain = chain_of_policy(m, g, pol, fo);
    std::vector<double> nu = stationary_distribution(chain, StatMethod::linear_solve);
    auto [ratio, wmean] = gain_forms(chain, nu);
    const double gamma = ratio;

    const int m0 = chain.m0;
    const int N = chain.states();
    const int ref_node = cfg.ref_node >= 0 ? cfg.ref_node : g.index_of(0.0);
    const int ref = ref_node * m0 + cfg.ref_regime;

    double sum_dt = 0.0;
    for (int z = 0; z < N; ++z) sum_dt += nu[z] * chain.rows[z].dt;
    const double scalar_shift = gamma * sum_dt;

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd rhs(N);
    for (int z = 0; z < N; ++z) {
        const int i = z / m0, r = z % m0;
        const TransitionRow& row = chain.rows[z];
        A(z, z) += 1.0;
        if (row.flag == BoundaryFlag::interior) {
            if (row.p_up != 0.0) A(z, (i + 1) * m0 + r) -= row.p_up;
            if (row.p_down != 0.0) A(z, (i - 1) * m0 + r) -= row.p_down;
            for (int j = 0; j < m0; ++j)
                if (row.p_switch[j] != 0.0) A(z, i * m0 + j) -= row.p_switch[j];
        } else {
            A(z, row.reflect_to * m0 + r) -= 1.0;
        }
        const double bias = cfg.variant == RviVariant::semi_mdp ? gamma * row.dt : scalar_shift;
        rhs(z) = chain.f[z] * row.dt - bias;
    }
    A.row(ref).setZero();
    A(ref, ref) = 1.0;
    rhs(ref) = 0.0;

    Eigen::VectorXd V = A.fullPivLu().solve(rhs);
    if ((A * V - rhs).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, rhs.norm()))
        throw RankError("policy evaluation system is singular; the chain is not unichain");

    PolicyValues out;
    out.values.m0 = m0;
    out.values.ref_node = ref_node;
    out.values.ref_regime = cfg.ref_regime;
    out.values.v.assign(V.data(), V.data() + N);
    out.gain.gamma = gamma;
    out.gain.method = GainMethod::invariant_measure;
    out.gain.residual = std::abs(ratio - wmean);
    return out;
}

GlobalResult global_iterate(const Model& m, const Grid& coarse, const Grid& fine,
                            const SolverConfig& solver_cfg, const TrainConfig& train_cfg,
                            double epsilon1, int w1, const RewardFn& f_override) {
    if (w1 < 1) throw DomainError("refinement needs at least one round");
    // the coarse mesh must sit on the fine one: same span, integer ratio >= 2
    const double ratio = coarse.h / fine.h;
    const long k = std::lround(ratio);
    if (k < 2 || std::abs(ratio - static_cast<double>(k)) > 1e-9)
        throw AlignmentError("coarse spacing must be an integer multiple (>= 2) of fine spacing");
    const double b_coarse = coarse.nodes.back() - coarse.h;
    const double b_fine = fine.nodes.back() - fine.h;
    if (std::abs(b_coarse - b_fine) > 1e-9 * std::max(1.0, std::abs(b_fine)))
        throw AlignmentError("coarse and fine grids must span the same interval");

    GlobalResult res{PolicyNet(m.m0(), fine.nodes.back(), train_cfg.seed),
                     {}, {}, {}, {}, {}, false, 0, {}};
    const int m0 = m.m0();

    TransitionTable coarse_table = build_table(m, coarse, solver_cfg.resolution, f_override);

    ValueTable v_prev;
    v_prev.m0 = m0;
    v_prev.v.assign(fine.size() * m0, 0.0);

    ValueTable u_warm;
    double gamma_warm = 0.0;
    bool have_warm = false;
    double gamma_fine = 0.0;  // last fine-grid gain; the coarse gain seeds round 1

    for (int round = 1; round <= w1; ++round) {
        RviResult rr = rvi_solve(m, coarse, solver_cfg, f_override, &coarse_table,
                                 have_warm ? &u_warm : nullptr, gamma_warm);
        FitReport fit = fit_to_tabular(res.net, m, coarse, rr.policy, train_cfg);
        const double gamma_ref = have_warm ? gamma_fine : rr.iterate_gain.gamma;
        AscendReport asc = ascend(res.net, m, fine, v_prev, train_cfg, f_override, gamma_ref);
        TabularPolicy fine_policy = restrict_to_grid(res.net, m, fine);
        PolicyValues ev = solve_policy_values(m, fine, fine_policy, solver_cfg, f_override);

        double delta = 0.0;
        for (size_t i = 0; i < ev.values.v.size(); ++i)
            delta += std::abs(ev.values.v[i] - v_prev.v[i]);

        res.log.push_back({round, rr.sweeps, rr.iterate_gain.gamma, fit.mse, fit.max_abs_dev,
                           asc.g_start, asc.g_final, ev.gain.gamma, delta});
        res.rounds = round;
        res.coarse_policy = std::move(rr.policy);
        res.u_coarse = rr.values;
        res.fine_policy = std::move(fine_policy);
        res.gain = ev.gain;

        v_prev = std::move(ev.values);
        u_warm = std::move(rr.values);
        gamma_warm = rr.iterate_gain.gamma;
        gamma_fine = ev.gain.gamma;
        have_warm = true;

        if (delta < epsilon1) {
            res.converged = true;
            break;
        }
    }
    res.v_fine = std::move(v_prev);
    return res;
}

}  // namespace mcam
