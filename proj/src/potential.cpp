#include "alloop/potential.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "alloop/core/error.hpp"
#include "alloop/core/geometry.hpp"
#include "alloop/core/parallel.hpp"

namespace alloop::potential {

// ---------------------------------------------------------------------------
// Basis

DescriptorBasis DescriptorBasis::make(std::vector<std::string> species, double cutoff, int n_radial, double r_min) {
    if (!(cutoff > r_min) || r_min < 0.0) throw ConfigurationError("descriptor range must satisfy 0 <= r_min < cutoff");
    if (n_radial < 1) throw ConfigurationError("n_radial must be at least 1");
    std::sort(species.begin(), species.end());
    species.erase(std::unique(species.begin(), species.end()), species.end());
    if (species.empty()) throw ConfigurationError("descriptor basis needs at least one species");
    DescriptorBasis b;
    b.cutoff = cutoff;
    b.n_radial = n_radial;
    b.r_min = r_min;
    b.width = n_radial > 1 ? (cutoff - r_min) / (n_radial - 1) : (cutoff - r_min);
    b.species = std::move(species);
    return b;
}

DescriptorBasis DescriptorBasis::halved() const {
    return make(species, cutoff, std::max(1, n_radial / 2), r_min);
}

std::vector<std::pair<std::string, std::string>> DescriptorBasis::species_pairs() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t a = 0; a < species.size(); ++a)
        for (std::size_t b = a; b < species.size(); ++b) out.emplace_back(species[a], species[b]);
    return out;
}

double DescriptorBasis::center(int k) const {
    if (n_radial == 1) return r_min;
    return r_min + (cutoff - r_min) * static_cast<double>(k) / static_cast<double>(n_radial - 1);
}

int DescriptorBasis::species_index(const std::string& s) const {
    auto it = std::lower_bound(species.begin(), species.end(), s);
    return (it != species.end() && *it == s) ? static_cast<int>(it - species.begin()) : -1;
}

std::size_t DescriptorBasis::pair_index(int a, int b) const {
    if (a > b) std::swap(a, b);
    const std::size_t n = species.size();
    const std::size_t ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    // Row-major upper triangle including the diagonal.
    return ua * n - ua * (ua - 1) / 2 + (ub - ua);
}

void DescriptorBasis::radial(double r, double* g, double* dg) const {
    if (r >= cutoff) {
        for (int k = 0; k < n_radial; ++k) g[k] = dg[k] = 0.0;
        return;
    }
    const double x = std::numbers::pi * r / cutoff;
    const double fc = 0.5 * (std::cos(x) + 1.0);
    const double dfc = -0.5 * std::numbers::pi / cutoff * std::sin(x);
    const double inv_w2 = 1.0 / (width * width);
    if (n_radial == 1) {
        const double d = r - r_min;
        const double e = std::exp(-0.5 * d * d * inv_w2);
        g[0] = e * fc;
        dg[0] = e * (dfc - d * inv_w2 * fc);
        return;
    }
    // Evenly spaced centers let neighbouring Gaussians follow from one another:
    //   G_{k+1} / G_k = exp((r - mu_k) D / w^2 - D^2 / (2 w^2)),  D = spacing,
    // a ratio that shrinks by exp(-D^2 / w^2) per step. The recurrence starts
    // at the nearest center and runs outwards so nothing underflows early.
    const double spacing = (cutoff - r_min) / static_cast<double>(n_radial - 1);
    const int k0 = std::clamp(static_cast<int>(std::lround((r - r_min) / spacing)), 0, n_radial - 1);
    const double d0 = r - center(k0);
    const double q = std::exp(-spacing * spacing * inv_w2);
    const double e0 = std::exp(-0.5 * d0 * d0 * inv_w2);
    double* e = g;  // pure Gaussians first, cutoff applied below
    e[k0] = e0;
    double ratio = std::exp(d0 * spacing * inv_w2 - 0.5 * spacing * spacing * inv_w2);
    for (int k = k0 + 1; k < n_radial; ++k) {
        e[k] = e[k - 1] * ratio;
        ratio *= q;
    }
    ratio = std::exp(-d0 * spacing * inv_w2 - 0.5 * spacing * spacing * inv_w2);
    for (int k = k0 - 1; k >= 0; --k) {
        e[k] = e[k + 1] * ratio;
        ratio *= q;
    }
    for (int k = 0; k < n_radial; ++k) {
        const double d = r - center(k);
        dg[k] = e[k] * (dfc - d * inv_w2 * fc);
        g[k] = e[k] * fc;
    }
}

json DescriptorBasis::to_json() const {
    return {{"cutoff", cutoff}, {"n_radial", n_radial}, {"r_min", r_min}, {"width", width}, {"species", species}};
}

DescriptorBasis DescriptorBasis::from_json(const json& j) {
    DescriptorBasis b = make(j.at("species").get<std::vector<std::string>>(), j.value("cutoff", 5.0),
                             j.value("n_radial", 12), j.value("r_min", 1.0));
    if (j.contains("width")) b.width = j.at("width").get<double>();
    return b;
}

// ---------------------------------------------------------------------------
// Descriptors

DescriptorSet compute_descriptors(const AtomicConfiguration& config, const DescriptorBasis& basis) {
    DescriptorSet out;
    const std::size_t n = config.size();
    const std::size_t dim = basis.feature_dim();
    const int nr = basis.n_radial;
    out.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    out.types.reserve(n);
    for (const auto& s : config.species) {
        int t = basis.species_index(s);
        if (t < 0) throw PredictionError("species " + s + " is not covered by the descriptor basis");
        out.types.push_back(t);
    }
    if (n == 0) return out;
    std::vector<double> g(static_cast<std::size_t>(nr)), dg(static_cast<std::size_t>(nr));
    for (const auto& p : neighbor_pairs(config, basis.cutoff)) {
        basis.radial(p.distance, g.data(), dg.data());
        const std::size_t pt = basis.pair_index(out.types[p.i], out.types[p.j]);
        const auto col = static_cast<Eigen::Index>(pt * static_cast<std::size_t>(nr));
        for (int k = 0; k < nr; ++k) {
            out.features(static_cast<Eigen::Index>(p.i), col + k) += g[static_cast<std::size_t>(k)];
            out.features(static_cast<Eigen::Index>(p.j), col + k) += g[static_cast<std::size_t>(k)];
        }
        out.pairs.push_back({p.i, p.j, pt, p.displacement / p.distance, dg});
    }
    return out;
}

Eigen::MatrixXd DescriptorSet::gradient(std::size_t atom, std::size_t wrt, const DescriptorBasis& basis) const {
    const int nr = basis.n_radial;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(basis.feature_dim()), 3);
    for (const auto& t : pairs) {
        if (t.i != atom && t.j != atom) continue;
        // phi_atom gains the term once per end it occupies.
        const int owners = (t.i == atom ? 1 : 0) + (t.j == atom ? 1 : 0);
        double sign = 0.0;
        if (wrt == t.j) sign += 1.0;
        if (wrt == t.i) sign -= 1.0;
        if (sign == 0.0) continue;
        const auto col = static_cast<Eigen::Index>(t.pair_type * static_cast<std::size_t>(nr));
        for (int k = 0; k < nr; ++k)
            out.row(col + k) += owners * sign * t.dg[static_cast<std::size_t>(k)] * t.unit.transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model

std::string to_string(TrainMode m) { return m == TrainMode::Quick ? "quick" : "accurate"; }

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "quick") return TrainMode::Quick;
    if (s == "accurate") return TrainMode::Accurate;
    throw ConfigurationError("unknown training mode '" + s + "'");
}

SurrogateModel SurrogateModel::zeros(const DescriptorBasis& basis) {
    SurrogateModel m;
    m.basis = basis;
    m.weights.assign(basis.species.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.feature_dim())));
    m.intercepts.assign(basis.species.size(), 0.0);
    return m;
}

json SurrogateModel::to_json() const {
    json w = json::object(), b = json::object();
    for (std::size_t s = 0; s < basis.species.size(); ++s) {
        w[basis.species[s]] = std::vector<double>(weights[s].data(), weights[s].data() + weights[s].size());
        b[basis.species[s]] = intercepts[s];
    }
    return {{"model_id", model_id},
            {"parent_id", parent_id ? json(*parent_id) : json(nullptr)},
            {"basis", basis.to_json()},
            {"weights", w},
            {"intercepts", b},
            {"lambda", lambda},
            {"beta", beta},
            {"metrics", {{"energy_mae", metrics.energy_mae}, {"force_mae", metrics.force_mae}}},
            {"trained_on", trained_on},
            {"mode", to_string(mode)}};
}

SurrogateModel SurrogateModel::from_json(const json& j) {
    SurrogateModel m = zeros(DescriptorBasis::from_json(j.at("basis")));
    m.model_id = j.at("model_id").get<std::string>();
    if (j.contains("parent_id") && !j.at("parent_id").is_null()) m.parent_id = j.at("parent_id").get<std::string>();
    for (std::size_t s = 0; s < m.basis.species.size(); ++s) {
        auto v = j.at("weights").at(m.basis.species[s]).get<std::vector<double>>();
        if (v.size() != m.basis.feature_dim()) throw ConfigurationError("weight vector size mismatch");
        m.weights[s] = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        m.intercepts[s] = j.at("intercepts").at(m.basis.species[s]).get<double>();
    }
    m.lambda = j.value("lambda", 1e-6);
    m.beta = j.value("beta", 10.0);
    if (j.contains("metrics")) {
        m.metrics.energy_mae = j["metrics"].value("energy_mae", 0.0);
        m.metrics.force_mae = j["metrics"].value("force_mae", 0.0);
    }
    m.trained_on = j.value("trained_on", std::vector<std::string>{});
    m.mode = train_mode_from_string(j.value("mode", "accurate"));
    return m;
}

void SurrogateModel::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write model " + path);
    out << to_json().dump(1) << '\n';
}

SurrogateModel SurrogateModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read model " + path);
    return from_json(json::parse(in));
}

Prediction predict(const SurrogateModel& model, const AtomicConfiguration& config) {
    const auto& basis = model.basis;
    const DescriptorSet ds = compute_descriptors(config, basis);
    const int nr = basis.n_radial;
    Prediction out;
    out.forces.assign(config.size(), Vec3::Zero());
    for (std::size_t i = 0; i < config.size(); ++i) {
        const auto s = static_cast<std::size_t>(ds.types[i]);
        out.energy += model.intercepts[s] + model.weights[s].dot(ds.features.row(static_cast<Eigen::Index>(i)));
    }
    for (const auto& t : ds.pairs) {
        const auto col = static_cast<Eigen::Index>(t.pair_type * static_cast<std::size_t>(nr));
        const auto& wi = model.weights[static_cast<std::size_t>(ds.types[t.i])];
        const auto& wj = model.weights[static_cast<std::size_t>(ds.types[t.j])];
        double c = 0.0;
        for (int k = 0; k < nr; ++k) c += (wi[col + k] + wj[col + k]) * t.dg[static_cast<std::size_t>(k)];
        out.forces[t.j] -= c * t.unit;
        out.forces[t.i] += c * t.unit;
    }
    return out;
}

SurrogateForceField::SurrogateForceField(const SurrogateModel& model)
    : basis_(model.basis), intercepts_(model.intercepts), id_(model.model_id) {
    const std::size_t n = basis_.species.size();
    const int nr = basis_.n_radial;
    coeff_.assign(n * n, std::vector<double>(static_cast<std::size_t>(nr), 0.0));
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            const auto col = static_cast<Eigen::Index>(basis_.pair_index(static_cast<int>(a), static_cast<int>(b)) *
                                                       static_cast<std::size_t>(nr));
            for (int k = 0; k < nr; ++k)
                coeff_[a * n + b][static_cast<std::size_t>(k)] = model.weights[a][col + k] + model.weights[b][col + k];
        }
}

void SurrogateForceField::pair(int si, int sj, double r, double& v, double& dv) const {
    const auto& c = coeff_[static_cast<std::size_t>(si) * basis_.species.size() + static_cast<std::size_t>(sj)];
    const int nr = basis_.n_radial;
    double g[64], dg[64];
    if (nr > 64) {
        std::vector<double> gv(static_cast<std::size_t>(nr)), dgv(static_cast<std::size_t>(nr));
        basis_.radial(r, gv.data(), dgv.data());
        v = dv = 0.0;
        for (int k = 0; k < nr; ++k) {
            v += c[static_cast<std::size_t>(k)] * gv[static_cast<std::size_t>(k)];
            dv += c[static_cast<std::size_t>(k)] * dgv[static_cast<std::size_t>(k)];
        }
        return;
    }
    basis_.radial(r, g, dg);
    v = dv = 0.0;
    for (int k = 0; k < nr; ++k) {
        v += c[static_cast<std::size_t>(k)] * g[k];
        dv += c[static_cast<std::size_t>(k)] * dg[k];
    }
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Parameter layout: for each species, the radial blocks of every pair type
// that involves it, then one intercept per species. Blocks of pair types a
// species never belongs to are structurally zero and carry no parameter.
struct ParameterLayout {
    std::size_t n_species = 0;
    int n_radial = 0;
    std::vector<std::vector<long>> block;  // [species][pair_type] -> first column or -1
    std::size_t n_weights = 0;
    std::size_t n_params = 0;

    explicit ParameterLayout(const DescriptorBasis& basis) {
        n_species = basis.species.size();
        n_radial = basis.n_radial;
        block.assign(n_species, std::vector<long>(basis.n_pairs(), -1));
        std::size_t col = 0;
        for (std::size_t s = 0; s < n_species; ++s)
            for (std::size_t t = 0; t < n_species; ++t) {
                const std::size_t p = basis.pair_index(static_cast<int>(s), static_cast<int>(t));
                if (block[s][p] >= 0) continue;
                block[s][p] = static_cast<long>(col);
                col += static_cast<std::size_t>(n_radial);
            }
        n_weights = col;
        n_params = col + n_species;
    }
    std::size_t intercept(std::size_t s) const { return n_weights + s; }
};

struct NormalSystem {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    std::size_t equations = 0;
};

void accumulate_frame(const LabeledFrame& frame, const DescriptorBasis& basis, const ParameterLayout& layout,
                      double beta, NormalSystem& sys) {
    const auto& cfg = frame.config;
    const std::size_t n = cfg.size();
    const DescriptorSet ds = compute_descriptors(cfg, basis);
    const auto P = static_cast<Eigen::Index>(layout.n_params);
    const int nr = basis.n_radial;

    Eigen::VectorXd erow = Eigen::VectorXd::Zero(P);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(ds.types[i]);
        for (std::size_t p = 0; p < basis.n_pairs(); ++p) {
            const long base = layout.block[s][p];
            if (base < 0) continue;
            const auto fcol = static_cast<Eigen::Index>(p * static_cast<std::size_t>(nr));
            erow.segment(base, nr) += ds.features.row(static_cast<Eigen::Index>(i)).segment(fcol, nr).transpose();
        }
        erow[static_cast<Eigen::Index>(layout.intercept(s))] += 1.0;
    }
    const double inv_n2 = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
    sys.a.selfadjointView<Eigen::Lower>().rankUpdate(erow, inv_n2);
    sys.b += erow * (frame.energy * inv_n2);
    sys.equations += 1;

    if (beta > 0.0) {
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * n), P);
        for (const auto& t : ds.pairs) {
            for (std::size_t owner : {t.i, t.j}) {
                const auto s = static_cast<std::size_t>(ds.types[owner]);
                const long base = layout.block[s][t.pair_type];
                for (int k = 0; k < nr; ++k) {
                    const double g = t.dg[static_cast<std::size_t>(k)];
                    for (int a = 0; a < 3; ++a) {
                        jac(static_cast<Eigen::Index>(3 * t.j + a), base + k) -= g * t.unit[a];
                        jac(static_cast<Eigen::Index>(3 * t.i + a), base + k) += g * t.unit[a];
                    }
                }
            }
        }
        Eigen::VectorXd f(static_cast<Eigen::Index>(3 * n));
        for (std::size_t i = 0; i < n; ++i) f.segment<3>(static_cast<Eigen::Index>(3 * i)) = frame.forces[i];
        sys.a.selfadjointView<Eigen::Lower>().rankUpdate(jac.transpose(), beta);
        sys.b.noalias() += beta * (jac.transpose() * f);
        sys.equations += 3 * n;
    }
}

std::vector<const Dataset*> ordered_union(const std::vector<Dataset>& datasets) {
    std::map<std::string, const Dataset*> by_id;
    for (const auto& d : datasets) by_id.emplace(d.dataset_id, &d);
    std::vector<const Dataset*> out;
    for (const auto& [id, d] : by_id) out.push_back(d);
    return out;
}

}  // namespace

json TrainRecord::to_json() const {
    return {{"model_id", model_id},
            {"parent_id", parent_id ? json(*parent_id) : json(nullptr)},
            {"energy_mae", metrics.energy_mae},
            {"force_mae", metrics.force_mae},
            {"outlier_count", outlier_count},
            {"epochs", epochs},
            {"frame_count", frame_count},
            {"equation_count", equation_count},
            {"mode", to_string(mode)},
            {"trained_on", trained_on}};
}

TrainResult train(const std::vector<Dataset>& datasets, const DescriptorBasis& basis_in, const TrainOptions& options,
                  const SurrogateModel* parent) {
    std::vector<Dataset> pool_storage;
    if (parent) {
        std::set<std::string> have;
        for (const auto& d : datasets) have.insert(d.dataset_id);
        for (const auto& id : parent->trained_on)
            if (!have.count(id))
                throw PreconditionError("fine-tune needs parent dataset " + id + " in the training union");
    }
    const auto pool = ordered_union(datasets);
    std::size_t frame_total = 0;
    for (const auto* d : pool) frame_total += d->frames.size();
    if (frame_total == 0) throw PreconditionError("training union is empty");
    if (options.lambda < 0.0 || options.beta < 0.0) throw ConfigurationError("lambda and beta must be non-negative");

    const DescriptorBasis basis = options.mode == TrainMode::Quick ? basis_in.halved() : basis_in;
    const double beta = options.mode == TrainMode::Quick ? 0.0 : options.beta;
    for (const auto* d : pool)
        for (const auto& f : d->frames)
            for (const auto& s : f.config.species)
                if (basis.species_index(s) < 0)
                    throw PreconditionError("species " + s + " in dataset " + d->dataset_id + " is not in the basis");

    const ParameterLayout layout(basis);
    const auto P = static_cast<Eigen::Index>(layout.n_params);

    // Fixed-size chunks summed in order keep the result independent of the
    // worker count.
    std::vector<const LabeledFrame*> frames;
    frames.reserve(frame_total);
    for (const auto* d : pool)
        for (const auto& f : d->frames) frames.push_back(&f);
    constexpr std::size_t kChunk = 16;
    const std::size_t nchunks = (frames.size() + kChunk - 1) / kChunk;
    std::vector<NormalSystem> partial(nchunks);
    parallel_for(nchunks, options.workers, [&](std::size_t c) {
        NormalSystem& sys = partial[c];
        sys.a = Eigen::MatrixXd::Zero(P, P);
        sys.b = Eigen::VectorXd::Zero(P);
        const std::size_t end = std::min(frames.size(), (c + 1) * kChunk);
        for (std::size_t f = c * kChunk; f < end; ++f) accumulate_frame(*frames[f], basis, layout, beta, sys);
    });
    NormalSystem sys;
    sys.a = Eigen::MatrixXd::Zero(P, P);
    sys.b = Eigen::VectorXd::Zero(P);
    for (auto& p : partial) {
        sys.a += p.a;
        sys.b += p.b;
        sys.equations += p.equations;
    }
    sys.a = sys.a.selfadjointView<Eigen::Lower>();

    // Columns without data (species absent from the union) stay at zero.
    std::vector<Eigen::Index> active;
    for (Eigen::Index k = 0; k < P; ++k)
        if (sys.a(k, k) > 0.0) active.push_back(k);
    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd b(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        b[r] = sys.b[active[static_cast<std::size_t>(r)]];
        for (Eigen::Index c = 0; c < m; ++c) a(r, c) = sys.a(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
        if (active[static_cast<std::size_t>(r)] < static_cast<Eigen::Index>(layout.n_weights)) a(r, r) += options.lambda;
    }
    // Jacobi scaling before the factorization.
    Eigen::VectorXd scale = a.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd as = scale.asDiagonal() * a * scale.asDiagonal();
    Eigen::VectorXd bs = scale.asDiagonal() * b;
    if (options.lambda == 0.0) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(as, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
        if (!(lo > 1e-13 * hi))
            throw TrainingError("normal matrix is singular at lambda = 0; use lambda > 0");
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(as);
    if (ldlt.info() != Eigen::Success) throw TrainingError("normal-equation factorization failed; increase lambda");
    Eigen::VectorXd xs = ldlt.solve(bs);
    // One step of iterative refinement.
    xs += ldlt.solve(bs - as * xs);
    const Eigen::VectorXd x = scale.asDiagonal() * xs;
    if (!x.allFinite()) throw TrainingError("normal-equation solve produced non-finite weights; increase lambda");

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
    for (Eigen::Index r = 0; r < m; ++r) theta[active[static_cast<std::size_t>(r)]] = x[r];

    SurrogateModel model = SurrogateModel::zeros(basis);
    model.model_id = options.model_id;
    if (parent) model.parent_id = parent->model_id;
    model.lambda = options.lambda;
    model.beta = beta;
    model.mode = options.mode;
    for (const auto* d : pool) model.trained_on.push_back(d->dataset_id);
    const int nr = basis.n_radial;
    for (std::size_t s = 0; s < layout.n_species; ++s) {
        for (std::size_t p = 0; p < basis.n_pairs(); ++p) {
            const long base = layout.block[s][p];
            if (base < 0) continue;
            model.weights[s].segment(static_cast<Eigen::Index>(p * static_cast<std::size_t>(nr)), nr) =
                theta.segment(base, nr);
        }
        model.intercepts[s] = theta[static_cast<Eigen::Index>(layout.intercept(s))];
    }

    std::vector<Dataset> union_sets;
    union_sets.reserve(pool.size());
    for (const auto* d : pool) union_sets.push_back(*d);
    model.metrics = compute_metrics(model, union_sets, options.workers);

    TrainResult result;
    result.record.model_id = model.model_id;
    result.record.parent_id = model.parent_id;
    result.record.metrics = model.metrics;
    result.record.frame_count = frames.size();
    result.record.equation_count = sys.equations;
    result.record.mode = options.mode;
    result.record.trained_on = model.trained_on;
    if (frames.size() >= 3) result.record.outlier_count = detect_outliers(model, union_sets, options.outlier_z, options.workers).size();
    result.model = std::move(model);
    return result;
}

namespace {

struct FrameResidual {
    double energy_per_atom = 0.0;     // E_pred/N - E/N
    double max_force_residual = 0.0;  // max_i |F_pred,i - F_i|
    double abs_force_sum = 0.0;       // sum of |component residuals|
    std::size_t components = 0;
};

std::vector<FrameResidual> residuals(const SurrogateModel& model, const std::vector<const LabeledFrame*>& frames,
                                     std::size_t workers) {
    SurrogateForceField ff(model);
    std::vector<FrameResidual> out(frames.size());
    parallel_for(frames.size(), workers, [&](std::size_t k) {
        const auto& f = *frames[k];
        const ForceEvaluation ev = evaluate(ff, f.config);
        FrameResidual r;
        const auto n = static_cast<double>(f.config.size());
        r.energy_per_atom = (ev.energy - f.energy) / n;
        for (std::size_t i = 0; i < f.config.size(); ++i) {
            const Vec3 d = ev.forces[i] - f.forces[i];
            r.max_force_residual = std::max(r.max_force_residual, d.norm());
            r.abs_force_sum += d.cwiseAbs().sum();
        }
        r.components = 3 * f.config.size();
        out[k] = r;
    });
    return out;
}

}  // namespace

Metrics compute_metrics(const SurrogateModel& model, const std::vector<Dataset>& datasets, std::size_t workers) {
    std::vector<const LabeledFrame*> frames;
    for (const auto* d : ordered_union(datasets))
        for (const auto& f : d->frames) frames.push_back(&f);
    Metrics m;
    if (frames.empty()) return m;
    const auto res = residuals(model, frames, workers);
    double e = 0.0, fsum = 0.0;
    std::size_t comps = 0;
    for (const auto& r : res) {
        e += std::abs(r.energy_per_atom);
        fsum += r.abs_force_sum;
        comps += r.components;
    }
    m.energy_mae = e / static_cast<double>(res.size());
    m.force_mae = comps ? fsum / static_cast<double>(comps) : 0.0;
    return m;
}

std::vector<Outlier> detect_outliers(const SurrogateModel& model, const std::vector<Dataset>& datasets, double z_max,
                                     std::size_t workers) {
    std::vector<const LabeledFrame*> frames;
    std::vector<std::pair<std::string, std::size_t>> where;
    for (const auto& d : datasets)
        for (std::size_t k = 0; k < d.frames.size(); ++k) {
            frames.push_back(&d.frames[k]);
            where.emplace_back(d.dataset_id, k);
        }
    if (frames.size() < 3) throw StatisticsError("outlier detection needs at least 3 frames");
    const auto res = residuals(model, frames, workers);

    auto mean_std = [&](auto get) {
        double mean = 0.0;
        for (const auto& r : res) mean += get(r);
        mean /= static_cast<double>(res.size());
        double var = 0.0;
        for (const auto& r : res) var += (get(r) - mean) * (get(r) - mean);
        return std::pair{mean, std::max(1e-12, std::sqrt(var / static_cast<double>(res.size())))};
    };
    const auto [e_mean, e_std] = mean_std([](const FrameResidual& r) { return r.energy_per_atom; });
    const auto [f_mean, f_std] = mean_std([](const FrameResidual& r) { return r.max_force_residual; });

    std::vector<Outlier> out;
    for (std::size_t k = 0; k < res.size(); ++k) {
        const bool e_flag = std::abs(res[k].energy_per_atom - e_mean) > z_max * e_std;
        const bool f_flag = res[k].max_force_residual - f_mean > z_max * f_std;
        if (!e_flag && !f_flag) continue;
        std::string reason = e_flag && f_flag ? "energy,force" : (e_flag ? "energy" : "force");
        out.push_back({where[k].first, where[k].second, reason});
    }
    return out;
}

void TrainingTimeEstimator::observe(std::size_t equations, double seconds) {
    samples_.emplace_back(static_cast<double>(equations), seconds);
}

double TrainingTimeEstimator::estimate(std::size_t equations) const {
    if (samples_.size() < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : samples_) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(samples_.size());
    const double den = n * sxx - sx * sx;
    if (std::abs(den) < 1e-300) return sy / n;
    const double slope = (n * sxy - sx * sy) / den;
    const double icpt = (sy - slope * sx) / n;
    return std::max(0.0, icpt + slope * static_cast<double>(equations));
}

}  // namespace alloop::potential
