// prehoc: verification suites, synthetic decode runs, certificates and one-shot bounds.
// Exit codes: 0 all checks pass, 1 an assertion failed, 2 usage or configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prehoc/bounds.hpp"
#include "prehoc/config.hpp"
#include "prehoc/decode_sim.hpp"
#include "prehoc/report.hpp"
#include "prehoc/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
    f << content;
    if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

prehoc::ExperimentConfig build_config(const std::string& path, const std::vector<std::string>& overrides,
                                      std::optional<std::uint64_t> seed) {
    prehoc::ExperimentConfig cfg = path.empty() ? prehoc::ExperimentConfig{} : prehoc::load_config(path);
    prehoc::apply_overrides(cfg, overrides);
    if (seed) cfg.sim.gen.seed = *seed;
    return cfg;
}

std::string columns_help() {
    std::string s = "Trace CSV columns (one row per step x layer x head):\n";
    for (const auto& c : prehoc::trace_columns()) s += "  " + c.name + ": " + c.description + "\n";
    s += "Prefill CSV columns (generator.simulate_prefill = true):\n";
    for (const auto& c : prehoc::prefill_columns()) s += "  " + c.name + ": " + c.description + "\n";
    return s;
}

std::string keys_help() {
    std::string s = "Config keys (key = value, '#' comments; override with --set key=value):\n";
    for (const auto& k : prehoc::config_keys()) s += "  " + k.key + ": " + k.description + "\n";
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pre-hoc sparse attention laboratory: property suites, decode simulation and certificates"};
    app.require_subcommand(1);

    // verify
    std::string suite;
    prehoc::VerifyOptions vopt;
    std::optional<std::size_t> vtrials;
    std::string vout;
    auto* verify = app.add_subcommand("verify", "Run a property suite and exit 0 iff every assertion holds");
    verify->add_option("suite", suite, "Suite name")->required();
    verify->add_option("--seed", vopt.seed, "Root seed");
    verify->add_option("--trials", vtrials, "Trials (per-suite default when omitted)");
    verify->add_option("--max-len", vopt.max_len, "oracle-optimal: largest L enumerated");
    verify->add_option("--max-budget", vopt.max_budget, "oracle-optimal: largest N enumerated");
    verify->add_option("--channels", vopt.channels, "mi-channel: number of random channels");
    verify->add_flag("--bound-only", vopt.bound_only, "mi-channel: check only |I_full - I_S| <= g(delta_sup)");
    verify->add_option("--out-dir", vout, "Write per-trial JSON records to <dir>/verify-<suite>.jsonl");
    std::string suites_list;
    for (const auto& s : prehoc::suite_names()) suites_list += "  " + s + "\n";
    verify->footer("Suites:\n" + suites_list);

    // decode
    std::string dconfig, dout = ".", dformat;
    std::vector<std::string> dsets;
    std::optional<std::uint64_t> dseed;
    auto* decode = app.add_subcommand("decode", "Run a synthetic decode and write the trace plus a summary JSON");
    decode->add_option("--config", dconfig, "Config file (defaults used when omitted)");
    decode->add_option("--set", dsets, "Override key=value (repeatable)");
    decode->add_option("--seed", dseed, "Override generator.seed");
    decode->add_option("--out-dir", dout, "Output directory (overrides output.dir)");
    decode->add_option("--format", dformat, "Trace format")->check(CLI::IsMember({"csv", "json"}));
    decode->footer(columns_help() + keys_help());

    // certify
    std::string cconfig, cout_dir;
    std::vector<std::string> csets;
    auto* certify = app.add_subcommand("certify", "Emit CIS/PSAW/ETF certificates, tuning and implied MI bounds");
    certify->add_option("--config", cconfig, "Config file (defaults used when omitted)");
    certify->add_option("--set", csets, "Override key=value (repeatable)");
    certify->add_option("--out-dir", cout_dir, "Also write <dir>/certificate.json");
    certify->footer(keys_help());

    // bounds
    double b_delta = 0.0, b_eps = 0.0, b_beta = 0.0;
    std::optional<double> b_tau;
    std::size_t b_len = 2;
    auto* bounds = app.add_subcommand("bounds", "Evaluate g, post-hoc and pre-hoc bounds from flags");
    bounds->add_option("--delta-star", b_delta, "Oracle dropped mass delta*");
    bounds->add_option("--eps-d", b_eps, "Posterior bias eps_D");
    bounds->add_option("--beta-th", b_beta, "Pre-hoc mass error beta_th");
    bounds->add_option("--tau", b_tau, "Retained mass for the KL variant ln(1/tau)");
    bounds->add_option("--length", b_len, "Context length L")->check(CLI::PositiveNumber);

    // config dump
    std::string pconfig;
    std::vector<std::string> psets;
    auto* print = app.add_subcommand("print-config", "Print the fully resolved configuration");
    print->add_option("--config", pconfig, "Config file");
    print->add_option("--set", psets, "Override key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitPass : kExitUsage;
    }

    try {
        if (*verify) {
            if (!prehoc::is_suite(suite)) {
                std::cerr << "unknown suite '" << suite << "'; expected one of:\n" << suites_list;
                return kExitUsage;
            }
            vopt.trials = vtrials;
            vopt.keep_records = !vout.empty();
            const prehoc::SuiteResult r = prehoc::run_suite(suite, vopt);
            if (!vout.empty()) {
                std::string lines;
                for (const json& rec : r.records) lines += rec.dump() + "\n";
                write_file(fs::path(vout) / ("verify-" + suite + ".jsonl"), lines);
            }
            std::cout << r.summary().dump(2) << "\n";
            if (!r.passed) {
                std::cerr << "verify " << suite << ": FAILED (" << r.failures << " of " << r.trials << " trials)\n";
                if (r.first_counterexample) std::cerr << "first counterexample: " << r.first_counterexample->dump() << "\n";
                return kExitFail;
            }
            return kExitPass;
        }
        if (*decode) {
            prehoc::ExperimentConfig cfg = build_config(dconfig, dsets, dseed);
            if (decode->count("--out-dir")) cfg.output.dir = dout;
            if (!dformat.empty()) cfg.output.format = dformat;
            const prehoc::DecodeTrace trace = prehoc::run_decode(cfg.sim);
            const fs::path dir(cfg.output.dir);
            if (cfg.output.format == "csv")
                write_file(dir / "trace.csv", prehoc::trace_csv(trace, cfg.output.run_id, cfg.sim.gen.seed));
            else
                write_file(dir / "trace.json", prehoc::trace_json(trace, cfg.output.run_id, cfg.sim.gen.seed).dump(1) + "\n");
            if (!trace.prefill.empty())
                write_file(dir / "prefill.csv", prehoc::prefill_csv(trace, cfg.output.run_id, cfg.sim.gen.seed));
            const json summary = prehoc::summary_json(trace, cfg);
            write_file(dir / "summary.json", summary.dump(2) + "\n");
            write_file(dir / "config.txt", prehoc::serialize_config(cfg));
            json brief = summary;
            brief.erase("rho_t");
            std::cout << brief.dump(2) << "\n";
            return kExitPass;
        }
        if (*certify) {
            const prehoc::ExperimentConfig cfg = build_config(cconfig, csets, std::nullopt);
            const json cert = prehoc::certificate_json(cfg);
            if (!cout_dir.empty()) write_file(fs::path(cout_dir) / "certificate.json", cert.dump(2) + "\n");
            std::cout << cert.dump(2) << "\n";
            return kExitPass;
        }
        if (*bounds) {
            json j;
            j["length"] = b_len;
            j["g_oracle"] = prehoc::to_json(prehoc::prehoc_bound(b_delta, 0.0, b_len));
            j["posthoc"] = prehoc::to_json(prehoc::posthoc_bound(b_delta, b_eps, b_len));
            j["prehoc"] = prehoc::to_json(prehoc::prehoc_bound(b_delta, b_beta, b_len));
            if (b_tau) j["kl_variant"] = prehoc::kl_variant(*b_tau);
            std::cout << j.dump(2) << "\n";
            return kExitPass;
        }
        if (*print) {
            std::cout << prehoc::serialize_config(build_config(pconfig, psets, std::nullopt));
            return kExitPass;
        }
    } catch (const prehoc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
