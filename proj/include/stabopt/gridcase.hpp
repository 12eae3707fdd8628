#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "stabopt/errors.hpp"

namespace stabopt {

using json = nlohmann::json;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

enum class BusKind { Generator, Load };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::Load;
    bool infinite = false;  ///< fixed angle and voltage, no swing state
    double shunt_g = 0.0;
    double shunt_b = 0.0;
    double damping = 0.0;   ///< load-bus frequency sensitivity d_i
};

/// Series admittance y = g + jb between two buses (b < 0 for inductive lines).
struct Branch {
    int id = 0;
    std::size_t from = 0;  ///< bus index
    std::size_t to = 0;
    double g = 0.0;
    double b = 0.0;
    double b_shunt = 0.0;  ///< total line charging, split between the ends
    double s_max = kInf;   ///< apparent-power limit; flows constrain |S|² ≤ s_max²

    std::complex<double> y() const { return {g, b}; }
};

struct Generator {
    std::size_t bus = 0;
    double p_min = 0.0, p_max = kInf;
    double q_min = -kInf, q_max = kInf;
    double cost_a1 = 0.0;  ///< quadratic coefficient
    double cost_a2 = 0.0;  ///< linear coefficient
    double inertia = 0.0;
    double damping = 0.0;
    double v_set = 1.0;
    double p_set = 0.0;  ///< scheduled output for stand-alone power flow
};

struct Load {
    std::size_t bus = 0;
    double p = 0.0;
    double q = 0.0;
};

struct Limits {
    double v_min = 0.9;
    double v_max = 1.1;
    double angle_diff_min = -kPi / 2;
    double angle_diff_max = kPi / 2;
};

class PowerCase {
public:
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;
    std::vector<Load> loads;
    Limits limits;

    std::size_t n_bus() const { return buses.size(); }

    std::size_t bus_index(int id) const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return i;
        throw InputError("unknown bus " + std::to_string(id));
    }

    std::size_t branch_index(int id) const {
        for (std::size_t k = 0; k < branches.size(); ++k)
            if (branches[k].id == id) return k;
        throw InputError("scenario references nonexistent branch " + std::to_string(id));
    }

    /// Generator at bus i, or -1.
    int generator_at(std::size_t i) const {
        for (std::size_t g = 0; g < generators.size(); ++g)
            if (generators[g].bus == i) return static_cast<int>(g);
        return -1;
    }

    int load_at(std::size_t i) const {
        for (std::size_t l = 0; l < loads.size(); ++l)
            if (loads[l].bus == i) return static_cast<int>(l);
        return -1;
    }

    /// Angle reference: the infinite bus when present, else the first generator bus.
    std::size_t reference_bus() const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].infinite) return i;
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].kind == BusKind::Generator) return i;
        throw InputError("case has no generator bus");
    }

    double load_p(std::size_t i) const { int l = load_at(i); return l < 0 ? 0.0 : loads[l].p; }
    double load_q(std::size_t i) const { int l = load_at(i); return l < 0 ? 0.0 : loads[l].q; }

    /// Inertia and damping used by the swing model at bus i.
    double inertia(std::size_t i) const {
        int g = generator_at(i);
        return g < 0 ? 0.0 : generators[g].inertia;
    }
    double damping(std::size_t i) const {
        int g = generator_at(i);
        return g < 0 ? buses[i].damping : generators[g].damping;
    }

    bool has_swing_state(std::size_t i) const {
        return buses[i].kind == BusKind::Generator && !buses[i].infinite;
    }

    PowerCase without_branch(std::size_t k) const {
        PowerCase c = *this;
        c.branches.erase(c.branches.begin() + static_cast<std::ptrdiff_t>(k));
        return c;
    }

    /// Throws InputError naming the first violated rule.
    void validate() const;
};

// ---------------------------------------------------------------------------
// JSON reading helpers with path context

namespace detail {

inline std::string line_context(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') { ++line; col = 1; } else { ++col; }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(source + ": parse error at " + line_context(text, e.byte) + ": " + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline const json& req(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw InputError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw InputError(path + "." + key + ": missing required field");
    return *it;
}

inline double as_num(const json& v, const std::string& path) {
    if (v.is_null()) return kInf;
    if (!v.is_number()) throw InputError(path + ": expected a number");
    return v.get<double>();
}

inline double req_num(const json& obj, const std::string& key, const std::string& path) {
    return as_num(req(obj, key, path), path + "." + key);
}

inline double opt_num(const json& obj, const std::string& key, double fallback, const std::string& path) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    if (it->is_null()) return fallback;
    return as_num(*it, path + "." + key);
}

inline int req_int(const json& obj, const std::string& key, const std::string& path) {
    const json& v = req(obj, key, path);
    if (!v.is_number_integer()) throw InputError(path + "." + key + ": expected an integer");
    return v.get<int>();
}

inline const json& req_array(const json& obj, const std::string& key, const std::string& path) {
    const json& v = req(obj, key, path);
    if (!v.is_array()) throw InputError(path + "." + key + ": expected an array");
    return v;
}

}  // namespace detail

inline void PowerCase::validate() const {
    if (buses.empty()) throw InputError("case has no buses");
    std::set<int> ids;
    for (const auto& b : buses)
        if (!ids.insert(b.id).second) throw InputError("duplicate bus id " + std::to_string(b.id));
    if (!(limits.v_min > 0.0)) throw InputError("v_min must be positive");
    if (limits.v_min > limits.v_max) throw InputError("v_min must not exceed v_max");
    if (limits.angle_diff_min > limits.angle_diff_max)
        throw InputError("angle_diff_min must not exceed angle_diff_max");

    int n_inf = 0;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const Bus& b = buses[i];
        int g = generator_at(i);
        if (b.kind == BusKind::Generator && g < 0)
            throw InputError("generator bus " + std::to_string(b.id) + " has no generator");
        if (b.kind == BusKind::Load && g >= 0)
            throw InputError("load bus " + std::to_string(b.id) + " carries a generator");
        if (b.infinite) {
            if (b.kind != BusKind::Generator)
                throw InputError("infinite bus " + std::to_string(b.id) + " must be a generator bus");
            ++n_inf;
        }
        if (b.kind == BusKind::Load && !(b.damping > 0.0))
            throw InputError("damping must be positive at load bus " + std::to_string(b.id));
    }
    if (n_inf > 1) throw InputError("at most one infinite bus is allowed");

    std::set<std::size_t> gen_buses;
    for (const auto& g : generators) {
        if (g.bus >= buses.size()) throw InputError("unknown bus in generator list");
        if (!gen_buses.insert(g.bus).second)
            throw InputError("more than one generator at bus " + std::to_string(buses[g.bus].id));
        if (g.cost_a1 < 0.0) throw InputError("cost_a1 must be nonnegative");
        if (g.p_min > g.p_max || g.q_min > g.q_max) throw InputError("generator limits are inverted");
        if (!buses[g.bus].infinite) {
            if (!(g.inertia > 0.0))
                throw InputError("inertia must be positive at generator bus " + std::to_string(buses[g.bus].id));
            if (!(g.damping > 0.0))
                throw InputError("damping must be positive at generator bus " + std::to_string(buses[g.bus].id));
        }
    }
    if (gen_buses.empty()) throw InputError("case has no generator");
    std::set<std::size_t> load_buses;
    for (const auto& l : loads) {
        if (l.bus >= buses.size()) throw InputError("unknown bus in load list");
        if (!load_buses.insert(l.bus).second)
            throw InputError("more than one load at bus " + std::to_string(buses[l.bus].id));
    }

    std::set<int> branch_ids;
    for (const auto& br : branches) {
        if (br.from >= buses.size() || br.to >= buses.size()) throw InputError("unknown bus");
        if (br.from == br.to) throw InputError("branch " + std::to_string(br.id) + " is a self-loop");
        if (!(br.b < 0.0))
            throw InputError("branch " + std::to_string(br.id) + " must have positive series reactance");
        if (!branch_ids.insert(br.id).second) throw InputError("duplicate branch id " + std::to_string(br.id));
    }

    // connectivity
    std::vector<std::vector<std::size_t>> adj(buses.size());
    for (const auto& br : branches) {
        adj[br.from].push_back(br.to);
        adj[br.to].push_back(br.from);
    }
    std::vector<bool> seen(buses.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t count = 1;
    while (!q.empty()) {
        std::size_t u = q.front();
        q.pop();
        for (std::size_t v : adj[u])
            if (!seen[v]) { seen[v] = true; ++count; q.push(v); }
    }
    if (count != buses.size()) throw InputError("network graph is not connected");
}

/// Parses a case document. `source` labels error messages.
inline PowerCase parse_case(const std::string& text, const std::string& source = "case") {
    using namespace detail;
    json j = parse_json_text(text, source);
    PowerCase c;
    const std::string root = source;
    if (!j.is_object()) throw InputError(root + ": top level must be an object");
    c.name = j.value("name", std::string{});
    c.base_mva = opt_num(j, "base_mva", 100.0, root);

    const json& jb = req_array(j, "buses", root);
    for (std::size_t i = 0; i < jb.size(); ++i) {
        std::string p = "buses[" + std::to_string(i) + "]";
        Bus b;
        b.id = req_int(jb[i], "id", p);
        const json& kind = req(jb[i], "kind", p);
        if (kind == "generator") b.kind = BusKind::Generator;
        else if (kind == "load") b.kind = BusKind::Load;
        else throw InputError(p + ".kind: expected \"generator\" or \"load\"");
        b.infinite = jb[i].value("infinite", false);
        b.shunt_g = opt_num(jb[i], "shunt_g", 0.0, p);
        b.shunt_b = opt_num(jb[i], "shunt_b", 0.0, p);
        b.damping = opt_num(jb[i], "damping", 0.0, p);
        c.buses.push_back(b);
    }

    auto bus_ref = [&](const json& obj, const std::string& key, const std::string& p) {
        int id = req_int(obj, key, p);
        for (std::size_t i = 0; i < c.buses.size(); ++i)
            if (c.buses[i].id == id) return i;
        throw InputError(p + "." + key + ": unknown bus " + std::to_string(id));
    };

    const json& jbr = req_array(j, "branches", root);
    for (std::size_t k = 0; k < jbr.size(); ++k) {
        std::string p = "branches[" + std::to_string(k) + "]";
        const json& o = jbr[k];
        Branch br;
        br.id = o.contains("id") ? req_int(o, "id", p) : static_cast<int>(k + 1);
        br.from = bus_ref(o, "from", p);
        br.to = bus_ref(o, "to", p);
        if (o.contains("x")) {
            double r = opt_num(o, "r", 0.0, p), x = req_num(o, "x", p);
            std::complex<double> y = 1.0 / std::complex<double>(r, x);
            br.g = y.real();
            br.b = y.imag();
        } else if (o.contains("b")) {
            br.g = opt_num(o, "g", 0.0, p);
            br.b = req_num(o, "b", p);
        } else {
            throw InputError(p + ": needs either r/x or g/b");
        }
        br.b_shunt = opt_num(o, "b_shunt", 0.0, p);
        br.s_max = opt_num(o, "s_max", kInf, p);
        c.branches.push_back(br);
    }

    const json& jg = req_array(j, "generators", root);
    for (std::size_t k = 0; k < jg.size(); ++k) {
        std::string p = "generators[" + std::to_string(k) + "]";
        const json& o = jg[k];
        Generator g;
        g.bus = bus_ref(o, "bus", p);
        g.p_min = opt_num(o, "p_min", 0.0, p);
        g.p_max = opt_num(o, "p_max", kInf, p);
        g.q_min = opt_num(o, "q_min", -kInf, p);
        g.q_max = opt_num(o, "q_max", kInf, p);
        g.cost_a1 = opt_num(o, "cost_a1", 0.0, p);
        g.cost_a2 = opt_num(o, "cost_a2", 0.0, p);
        g.inertia = opt_num(o, "inertia", 0.0, p);
        g.damping = opt_num(o, "damping", 0.0, p);
        g.v_set = opt_num(o, "v_set", 1.0, p);
        g.p_set = opt_num(o, "p_set", 0.0, p);
        c.generators.push_back(g);
    }

    if (j.contains("loads")) {
        const json& jl = req_array(j, "loads", root);
        for (std::size_t k = 0; k < jl.size(); ++k) {
            std::string p = "loads[" + std::to_string(k) + "]";
            const json& o = jl[k];
            Load l;
            l.bus = bus_ref(o, "bus", p);
            l.p = opt_num(o, "p", 0.0, p);
            l.q = opt_num(o, "q", 0.0, p);
            if (o.contains("damping")) c.buses[l.bus].damping = req_num(o, "damping", p);
            c.loads.push_back(l);
        }
    }

    if (j.contains("limits")) {
        const json& o = j["limits"];
        c.limits.v_min = opt_num(o, "v_min", c.limits.v_min, "limits");
        c.limits.v_max = opt_num(o, "v_max", c.limits.v_max, "limits");
        c.limits.angle_diff_min = opt_num(o, "angle_diff_min", c.limits.angle_diff_min, "limits");
        c.limits.angle_diff_max = opt_num(o, "angle_diff_max", c.limits.angle_diff_max, "limits");
    }

    c.validate();
    return c;
}

inline PowerCase load_case(const std::string& path) {
    return parse_case(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Admittance

/// Dense complex bus-admittance matrix with cached sparsity.
class AdmittanceMatrix {
public:
    AdmittanceMatrix() = default;
    explicit AdmittanceMatrix(Eigen::MatrixXcd y) : y_(std::move(y)) { index(); }

    std::size_t size() const { return static_cast<std::size_t>(y_.rows()); }
    const Eigen::MatrixXcd& matrix() const { return y_; }
    std::complex<double> operator()(std::size_t i, std::size_t j) const { return y_(i, j); }
    double G(std::size_t i, std::size_t j) const { return y_(i, j).real(); }
    double B(std::size_t i, std::size_t j) const { return y_(i, j).imag(); }
    double magnitude(std::size_t i, std::size_t j) const { return std::abs(y_(i, j)); }

    /// α_ij with G_ij cos θ + B_ij sin θ = |Y_ij| sin(θ + α_ij).
    double alpha(std::size_t i, std::size_t j) const {
        double g = G(i, j), b = B(i, j);
        if (g == 0.0) return 0.0;
        return std::atan2(g, b);
    }

    /// Off-diagonal nonzero columns of row i.
    const std::vector<std::size_t>& neighbors(std::size_t i) const { return nbr_[i]; }

    /// Distinct coupled bus pairs (i < j).
    const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }

    bool approx_equal(const AdmittanceMatrix& o, double tol = 1e-12) const {
        return size() == o.size() && (y_ - o.y_).cwiseAbs().maxCoeff() <= tol;
    }

private:
    void index() {
        std::size_t n = size();
        nbr_.assign(n, {});
        edges_.clear();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j && y_(i, j) != std::complex<double>(0.0, 0.0)) {
                    nbr_[i].push_back(j);
                    if (i < j) edges_.emplace_back(i, j);
                }
    }

    Eigen::MatrixXcd y_;
    std::vector<std::vector<std::size_t>> nbr_;
    std::vector<std::pair<std::size_t, std::size_t>> edges_;
};

enum class FaultType { MidpointLineToGround, BusLineToGround, None };
enum class OverrideScope { FaultedBuses, SystemWide, Off };
enum class DeltaReference { PreFault, PostFault };

/// Fault description as read from a scenario file.
struct FaultSpec {
    FaultType type = FaultType::MidpointLineToGround;
    std::optional<int> branch_id;
    std::optional<int> bus_id;
    double t_clear = 0.1;
    bool permanent = false;
    OverrideScope scope = OverrideScope::FaultedBuses;
    DeltaReference reference = DeltaReference::PreFault;
};

inline FaultSpec parse_fault_spec(const std::string& text, const std::string& source = "scenario") {
    using namespace detail;
    json j = parse_json_text(text, source);
    if (!j.is_object()) throw InputError(source + ": top level must be an object");
    FaultSpec s;
    std::string type = j.value("fault_type", std::string("midpoint_ltg"));
    if (type == "midpoint_ltg") s.type = FaultType::MidpointLineToGround;
    else if (type == "bus_ltg") s.type = FaultType::BusLineToGround;
    else if (type == "none") s.type = FaultType::None;
    else throw InputError(source + ".fault_type: unknown fault type \"" + type + "\"");
    if (j.contains("faulted_branch") && !j["faulted_branch"].is_null()) s.branch_id = req_int(j, "faulted_branch", source);
    if (j.contains("fault_bus") && !j["fault_bus"].is_null()) s.bus_id = req_int(j, "fault_bus", source);
    s.permanent = j.value("permanent", false);
    s.t_clear = s.permanent ? kInf : req_num(j, "t_clear", source);
    if (!(s.t_clear > 0.0)) throw InputError(source + ".t_clear: must be positive");
    std::string scope = j.value("injection_override", std::string("faulted_buses"));
    if (scope == "faulted_buses") s.scope = OverrideScope::FaultedBuses;
    else if (scope == "system_wide") s.scope = OverrideScope::SystemWide;
    else if (scope == "none") s.scope = OverrideScope::Off;
    else throw InputError(source + ".injection_override: unknown value \"" + scope + "\"");
    std::string ref = j.value("delta_reference", std::string("pre_fault"));
    if (ref == "pre_fault") s.reference = DeltaReference::PreFault;
    else if (ref == "post_fault") s.reference = DeltaReference::PostFault;
    else throw InputError(source + ".delta_reference: unknown value \"" + ref + "\"");
    if (s.type == FaultType::MidpointLineToGround && !s.branch_id)
        throw InputError(source + ".faulted_branch: required for midpoint_ltg");
    if (s.type == FaultType::BusLineToGround && !s.bus_id)
        throw InputError(source + ".fault_bus: required for bus_ltg");
    return s;
}

inline FaultSpec load_fault_spec(const std::string& path) {
    return parse_fault_spec(detail::read_file(path), path);
}

/// Bus admittance of an explicit branch list plus bus shunts.
inline AdmittanceMatrix assemble_admittance(const std::vector<Bus>& buses, const std::vector<Branch>& branches) {
    std::size_t n = buses.size();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (std::size_t i = 0; i < n; ++i) y(i, i) += std::complex<double>(buses[i].shunt_g, buses[i].shunt_b);
    for (const auto& br : branches) {
        std::complex<double> ys = br.y();
        std::complex<double> half(0.0, br.b_shunt / 2.0);
        y(br.from, br.from) += ys + half;
        y(br.to, br.to) += ys + half;
        y(br.from, br.to) -= ys;
        y(br.to, br.from) -= ys;
    }
    return AdmittanceMatrix(std::move(y));
}

enum class AdmittanceVariant { Base, Faulted, PostFault };

/// Y, Y″ or Y′ for the case. Faulted and post-fault variants need a scenario.
inline AdmittanceMatrix build_admittance(const PowerCase& c, AdmittanceVariant variant,
                                         const FaultSpec* scenario = nullptr) {
    if (variant == AdmittanceVariant::Base) return assemble_admittance(c.buses, c.branches);
    if (!scenario) throw InputError("faulted/post-fault admittance requires a scenario");

    std::vector<Bus> buses = c.buses;
    std::vector<Branch> branches = c.branches;
    std::optional<std::size_t> k;
    if (scenario->branch_id) k = c.branch_index(*scenario->branch_id);

    if (variant == AdmittanceVariant::PostFault) {
        if (scenario->type != FaultType::None && k) branches.erase(branches.begin() + static_cast<std::ptrdiff_t>(*k));
        return assemble_admittance(buses, branches);
    }

    switch (scenario->type) {
    case FaultType::None:
        break;
    case FaultType::MidpointLineToGround: {
        // each half of the line (admittance 2y) becomes a shunt at its end bus
        const Branch br = branches[*k];
        branches.erase(branches.begin() + static_cast<std::ptrdiff_t>(*k));
        std::complex<double> yh = 2.0 * br.y() + std::complex<double>(0.0, br.b_shunt / 2.0);
        for (std::size_t end : {br.from, br.to}) {
            buses[end].shunt_g += yh.real();
            buses[end].shunt_b += yh.imag();
        }
        break;
    }
    case FaultType::BusLineToGround: {
        // bus f is held at zero voltage: every incident branch grounds its far end
        std::size_t f = c.bus_index(*scenario->bus_id);
        std::vector<Branch> kept;
        for (const auto& br : branches) {
            if (br.from != f && br.to != f) { kept.push_back(br); continue; }
            std::size_t far = br.from == f ? br.to : br.from;
            std::complex<double> ys = br.y() + std::complex<double>(0.0, br.b_shunt / 2.0);
            buses[far].shunt_g += ys.real();
            buses[far].shunt_b += ys.imag();
        }
        branches = std::move(kept);
        break;
    }
    }
    return assemble_admittance(buses, branches);
}

/// Buses whose injections are overridden while the fault is on.
inline std::vector<std::size_t> faulted_buses(const PowerCase& c, const FaultSpec& s) {
    switch (s.type) {
    case FaultType::MidpointLineToGround: {
        const Branch& br = c.branches[c.branch_index(*s.branch_id)];
        return {br.from, br.to};
    }
    case FaultType::BusLineToGround:
        return {c.bus_index(*s.bus_id)};
    case FaultType::None:
        break;
    }
    return {};
}

}  // namespace stabopt
