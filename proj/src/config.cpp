#include "prehoc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace prehoc {

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double to_double(const std::string& key, const std::string& v) {
    const std::string s = trim(v);
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double out = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, v, "a real number");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    const std::string s = trim(v);
    std::uint64_t out = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
        bad_value(key, v, "a non-negative integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    const std::string s = trim(v);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad_value(key, v, "a boolean (true|false)");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, item));
    if (out.empty()) bad_value(key, v, "a comma-separated list of reals");
    return out;
}

std::string from_list(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

std::string from_opt(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "auto"; }
std::optional<std::size_t> to_opt(const std::string& key, const std::string& v) {
    if (trim(v) == "auto") return std::nullopt;
    return static_cast<std::size_t>(to_u64(key, v));
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Field {
    ConfigKey meta;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

template <class Ref>
Field real(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)}, [ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_double(k, v); }};
}

template <class Ref>
Field count(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)},
            [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
                ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(to_u64(k, v));
            }};
}

template <class Ref>
Field flag(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)}, [ref](const ExperimentConfig& c) { return from_bool(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_bool(k, v); }};
}

template <class Ref>
Field optional_count(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)}, [ref](const ExperimentConfig& c) { return from_opt(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_opt(k, v); }};
}

template <class Ref>
Field list(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)}, [ref](const ExperimentConfig& c) { return from_list(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) { ref(c) = to_list(k, v); }};
}

template <class Ref>
Field text(std::string key, std::string desc, Ref ref) {
    return {{std::move(key), std::move(desc)}, [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)); },
            [ref](ExperimentConfig& c, const std::string&, const std::string& v) { ref(c) = trim(v); }};
}

#define REF(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        count("generator.seed", "root 64-bit seed of every stream", REF(sim.gen.seed)),
        {{"generator.kind", "random_walk | exp_decay"},
         [](const ExperimentConfig& c) { return to_string(c.sim.gen.kind); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             try {
                 c.sim.gen.kind = parse_generator_kind(trim(v));
             } catch (const std::invalid_argument& e) {
                 throw ConfigError("config key '" + k + "': " + e.what());
             }
         }},
        real("generator.walk_rate", "embedding walk rate epsilon in [0, 1]", REF(sim.gen.walk_rate)),
        real("generator.weight_scale", "key projection scale (typical key norm)", REF(sim.gen.weight_scale)),
        flag("generator.unit_queries", "normalize queries to unit norm", REF(sim.gen.unit_queries)),
        list("generator.decay_rate", "lambda per layer (one value broadcasts)", REF(sim.gen.decay_rate)),
        list("generator.sink_mass", "tau_sink per layer", REF(sim.gen.sink_mass)),
        list("generator.decay_factor", "kappa per layer", REF(sim.gen.decay_factor)),
        count("generator.sink_count", "sink positions of the exp_decay channel", REF(sim.gen.sink_count)),
        real("generator.key_update_bound", "B, cap on cross-layer key updates", REF(sim.gen.key_update_bound)),
        real("generator.key_update_rate", "mu, depth decay of key updates", REF(sim.gen.key_update_rate)),
        optional_count("generator.update_ref_layer", "depth where key updates start decaying (auto = floor(3N/4))",
                       REF(sim.gen.update_ref_layer)),
        count("generator.steps", "decode steps T", REF(sim.steps)),
        count("generator.prefill_len", "prompt length before decoding", REF(sim.prefill_len)),
        flag("generator.simulate_prefill", "also simulate prefill with ETF/PSAW", REF(sim.simulate_prefill)),
        count("generator.prefill_stride", "prefill positions sampled every stride", REF(sim.prefill_stride)),
        count("head.d", "per-head dimension", REF(sim.head.d)),
        count("head.heads", "heads per layer H", REF(sim.head.heads)),
        count("head.layers", "layer count N", REF(sim.head.layers)),
        {{"selector.kind", "full | oracle | cis | tdo | qaa | cpe"},
         [](const ExperimentConfig& c) { return to_string(c.sim.selector.kind); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             try {
                 c.sim.selector.kind = parse_selector_kind(trim(v));
             } catch (const std::invalid_argument& e) {
                 throw ConfigError("config key '" + k + "': " + e.what());
             }
         }},
        count("selector.budget.c_sink", "sink tokens C_sink", REF(sim.selector.budget.c_sink)),
        count("selector.budget.c_local", "local window C_local", REF(sim.selector.budget.c_local)),
        count("selector.budget.k_mid", "middle budget k", REF(sim.selector.budget.k_mid)),
        count("selector.cis.block_size", "sharing block length s", REF(sim.selector.cis.block_size)),
        real("selector.cis.sim_threshold", "cosine gate theta_sim (> 1 disables sharing)", REF(sim.selector.cis.sim_threshold)),
        optional_count("selector.cis.dilate_count", "m dilated winners (auto = floor(k/3))", REF(sim.selector.cis.dilate_count)),
        count("selector.cis.dilate_radius", "dilation radius r", REF(sim.selector.cis.dilate_radius)),
        flag("selector.psaw.enabled", "cpe intersects with the PSAW window", REF(sim.selector.psaw_enabled)),
        optional_count("selector.psaw.start_layer", "l_s (auto = floor(3N/4))", REF(sim.selector.psaw.start_layer)),
        real("selector.psaw.phi", "phi in (0, 1)", REF(sim.selector.psaw.phi)),
        real("selector.psaw.alpha", "alpha >= 0", REF(sim.selector.psaw.alpha)),
        flag("selector.etf.enabled", "freeze early tokens during simulated prefill", REF(sim.selector.etf_enabled)),
        optional_count("selector.etf.start_layer", "l_s (auto = floor(3N/4))", REF(sim.selector.etf.start_layer)),
        real("selector.etf.psi", "psi in (0, 1)", REF(sim.selector.etf.psi)),
        real("selector.etf.gamma", "gamma > 0", REF(sim.selector.etf.gamma)),
        count("selector.qaa.sketch_dim", "sketch dimension d'", REF(sim.selector.qaa.sketch_dim)),
        count("selector.qaa.seed", "sketch seed", REF(sim.selector.qaa.seed)),
        flag("selector.qaa.identity_sketch", "identity sketch (requires d' = d)", REF(sim.selector.qaa.identity_sketch)),
        {{"selector.flops_charge", "retrieval cost in the FLOP proxy: scoring | dense"},
         [](const ExperimentConfig& c) { return to_string(c.sim.charge); },
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             try {
                 c.sim.charge = parse_retrieval_charge(trim(v));
             } catch (const std::invalid_argument& e) {
                 throw ConfigError("config key '" + k + "': " + e.what());
             }
         }},
        real("bounds.theta_sim", "similarity threshold for the CIS certificate", REF(bounds.cert.theta_sim)),
        real("bounds.k_max", "K_max, largest key norm", REF(bounds.cert.k_max)),
        real("bounds.q_max", "Q_max or Q-bar", REF(bounds.cert.q_max)),
        flag("bounds.q_is_average", "q_max is an average-case Q-bar", REF(bounds.cert.q_is_average)),
        real("bounds.diam_p", "diameter of the position set", REF(bounds.cert.diam_p)),
        real("bounds.lambda", "decay rate lambda", REF(bounds.cert.lambda)),
        real("bounds.kappa", "decay factor kappa", REF(bounds.cert.kappa)),
        real("bounds.tau_sink", "sink mass tau_sink", REF(bounds.cert.tau_sink)),
        real("bounds.window_dist", "PSAW window distance D", REF(bounds.cert.window_dist)),
        real("bounds.u_frac", "top-layer window fraction u_N = phi^alpha", REF(bounds.cert.u_frac)),
        count("bounds.dilate_radius", "dilation radius r for the CIS certificate", REF(bounds.cert.dilate_radius)),
        real("bounds.b_const", "B, key update bound", REF(bounds.cert.b_const)),
        real("bounds.mu", "mu, key update decay", REF(bounds.cert.mu)),
        real("bounds.depth_gap", "l - l_s for the ETF certificate", REF(bounds.cert.depth_gap)),
        real("bounds.beta_psaw_target", "PSAW budget target", REF(bounds.cert.beta_psaw_target)),
        real("bounds.beta_etf_target", "ETF budget target", REF(bounds.cert.beta_etf_target)),
        real("bounds.delta_star", "oracle dropped mass delta*", REF(bounds.delta_star)),
        count("bounds.context_len", "context length t for tuning", REF(bounds.context_len)),
        text("output.dir", "output directory", REF(output.dir)),
        text("output.format", "trace format: csv | json", REF(output.format)),
        text("output.run_id", "run identifier written into every row", REF(output.run_id)),
    };
    return f;
}

#undef REF

const Field& find_field(const std::string& key) {
    static const std::map<std::string, const Field*> index = [] {
        std::map<std::string, const Field*> m;
        for (const Field& f : fields()) m[f.meta.key] = &f;
        return m;
    }();
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
    return *it->second;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const Field& f : fields()) k.push_back(f.meta);
        return k;
    }();
    return keys;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const Field& f = find_field(key);
    f.set(cfg, key, value);
    if (key == "output.format" && cfg.output.format != "csv" && cfg.output.format != "json")
        throw ConfigError("config key 'output.format': expected csv or json, got '" + cfg.output.format + "'");
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        try {
            set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path);
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not of the form key=value");
        set_config_value(cfg, trim(o.substr(0, eq)), o.substr(eq + 1));
    }
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const Field& f : fields()) {
        const std::string head = f.meta.key.substr(0, f.meta.key.find('.'));
        if (head != section) {
            if (!section.empty()) os << '\n';
            os << "# " << head << '\n';
            section = head;
        }
        os << f.meta.key << " = " << f.get(cfg) << '\n';
    }
    return os.str();
}

}  // namespace prehoc
