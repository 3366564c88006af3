#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "ordimpute/bench.hpp"
#include "ordimpute/error.hpp"

using namespace ordimpute;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream s(line);
    std::string field;
    while (std::getline(s, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double x = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return x;
    } catch (const std::exception&) {
        throw DataError("bad number '" + text + "' in " + what);
    }
}

int cmd_inject(const fs::path& data_path, const fs::path& dict_path, const fs::path& scenario_path,
               std::uint64_t seed, const fs::path& out) {
    const auto dict = load_dictionary(dict_path);
    const auto data = load_csv(data_path, dict);
    if (data.mask().any()) throw DataError("inject needs fully observed input");
    const auto scenario = load_scenario(scenario_path, data.variables());
    const auto incomplete = inject(data.data(), scenario, seed);
    save_csv(incomplete, out);
    std::cerr << "masked " << incomplete.mask().count() << " cells; " << incomplete.mask().complete_rows() << " of "
              << incomplete.rows() << " rows complete\n";
    return 0;
}

int cmd_impute(const std::string& name, const std::string& method_json, const fs::path& data_path,
               const fs::path& dict_path, int imputations, std::uint64_t seed, const fs::path& out_dir,
               bool paper_scale) {
    const Profile profile = paper_scale ? Profile::paper_scale() : Profile::desk();
    MethodConfig method;
    if (!method_json.empty()) {
        std::ifstream in(method_json);
        if (!in) throw ConfigError("cannot open method config " + method_json);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("method config: ") + e.what());
        }
        if (j.is_object() && !j.contains("name")) j["name"] = name;
        method = method_from_json(j, profile);
    } else {
        method = standard_method(name, profile);
    }
    if (imputations < 1) imputations = profile.imputations;
    const auto input = load_csv(data_path, load_dictionary(dict_path));
    const auto result = run_method(method, input, imputations, seed);
    check_imputation(input, result);
    fs::create_directories(out_dir);
    for (std::size_t l = 0; l < result.completed.size(); ++l) {
        save_csv(result.completed[l], out_dir / ("completed_" + std::to_string(l + 1) + ".csv"));
    }
    std::cerr << result.method << ": wrote " << result.completed.size() << " completed datasets to " << out_dir.string()
              << '\n';
    return 0;
}

int cmd_estimate(const std::vector<std::string>& files, const fs::path& dict_path, const std::vector<int>& arities,
                 const fs::path& out_path) {
    const auto dict = load_dictionary(dict_path);
    std::vector<OrdinalDataset> completed;
    for (const auto& f : files) {
        auto d = load_csv(f, dict);
        if (d.mask().any()) throw DataError(f + " has missing cells");
        completed.push_back(d.data());
    }
    // estimands are chosen on the first dataset with the harness rule
    std::vector<Estimand> estimands;
    for (int a : arities) {
        auto es = enumerate_estimands(completed.front(), a, completed.front().rows());
        estimands.insert(estimands.end(), es.begin(), es.end());
    }
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path.string());
    out << "estimand,imputation,q,u\n";
    for (std::size_t l = 0; l < completed.size(); ++l) {
        if (completed[l].variables() != completed.front().variables()) throw DataError("column order differs across files");
        const auto est = cell_probabilities(completed[l], estimands);
        for (std::size_t e = 0; e < estimands.size(); ++e) {
            out << estimand_label(estimands[e], completed[l].variables()) << ',' << l + 1 << ','
                << format_double(est[e].q) << ',' << format_double(est[e].u) << '\n';
        }
    }
    return 0;
}

int cmd_pool(const fs::path& in_path, const fs::path& out_path) {
    std::ifstream in(in_path);
    if (!in) throw DataError("cannot open " + in_path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty estimates file");
    const auto header = split(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
    for (const char* need : {"estimand", "q", "u"}) {
        if (!col.count(need)) throw DataError(std::string("estimates file lacks column '") + need + "'");
    }
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != header.size()) throw DataError("line " + std::to_string(line_no) + ": wrong field count");
        const std::string& key = f[col["estimand"]];
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) order.push_back(key);
        it->second.first.push_back(parse_number(f[col["q"]], "line " + std::to_string(line_no)));
        it->second.second.push_back(parse_number(f[col["u"]], "line " + std::to_string(line_no)));
    }
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path.string());
    out << "estimand,L,q_bar,b,u_bar,t,dof,lower,upper\n";
    for (const auto& key : order) {
        const auto& [q, u] = groups[key];
        const PooledEstimate p = pool(q, u);
        out << key << ',' << q.size() << ',' << format_double(p.q_bar) << ',' << format_double(p.b) << ','
            << format_double(p.u_bar) << ',' << format_double(p.t) << ',' << format_double(p.dof) << ','
            << format_double(p.lower) << ',' << format_double(p.upper) << '\n';
    }
    return 0;
}

void print_medians(const MetricsReport& r) {
    std::printf("%-14s %5s %10s %10s %12s %8s\n", "method", "arity", "coverage", "rel_mse", "bias", "failed");
    for (const auto& run : r.runs) {
        for (int a : r.arities) {
            const auto cov = summary_median(r, run.method, a, "coverage");
            const auto rel = summary_median(r, run.method, a, "rel_mse");
            const auto bia = summary_median(r, run.method, a, "bias");
            std::printf("%-14s %5d %10.4f %10.4f %12.2e %8zu\n", run.method.c_str(), a, cov.value_or(NAN),
                        rel.value_or(NAN), bia.value_or(NAN), run.failures());
        }
    }
    std::printf("(medians over estimands)\n");
}

int cmd_bench(const fs::path& config_path, bool paper_scale, const std::string& out_override, int threads) {
    auto config = load_experiment(config_path, paper_scale);
    if (!out_override.empty()) config.output_dir = out_override;
    if (threads > 0) config.parallelism = threads;
    const auto population = load_population(config);
    std::cerr << "profile " << config.profile << (config.profile == "desk" ? " (not the paper's settings)" : "")
              << ": H=" << config.replications << " n=" << config.n_sample << " L=" << config.imputations << ", "
              << config.methods.size() << " methods, " << effective_parallelism(config) << " threads\n";
    const auto start = std::chrono::steady_clock::now();
    int last_pct = -1;
    const auto report = run_experiment(config, population, [&](std::size_t done, std::size_t total) {
        const int pct = static_cast<int>(100 * done / total);
        if (pct / 10 != last_pct / 10) {
            std::cerr << "  " << pct << "%\n";
            last_pct = pct;
        }
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit_report(report, config.output_dir);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    print_medians(report);
    std::cerr << "finished in " << secs << " s; report in " << config.output_dir.string() << '\n';
    return 0;
}

int cmd_report(const fs::path& json_path, const std::string& out_dir) {
    std::ifstream in(json_path);
    if (!in) throw DataError("cannot open " + json_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("report JSON: ") + e.what());
    }
    const auto report = report_from_json(j);
    emit_tables(report, out_dir.empty() ? json_path.parent_path() : fs::path(out_dir));
    print_medians(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ordimpute: multiple imputation for ordinal data and a repeated-sampling benchmark"};
    app.require_subcommand(1);

    std::string data, dict, scenario, out, method, method_json, config, json_in, estimates;
    std::vector<std::string> files;
    std::vector<int> arities{1, 2, 3};
    std::uint64_t seed = 1;
    int imputations = 0, threads = 0;
    bool paper_scale = false;

    auto* inj = app.add_subcommand("inject", "mask a complete CSV with a missingness scenario");
    inj->add_option("--data", data, "complete CSV")->required()->check(CLI::ExistingFile);
    inj->add_option("--dictionary", dict, "name,cardinality CSV")->required()->check(CLI::ExistingFile);
    inj->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    inj->add_option("--seed", seed, "random seed");
    inj->add_option("--out", out, "incomplete CSV")->required();

    auto* imp = app.add_subcommand("impute", "write L completed datasets");
    imp->add_option("--method", method, "method name, e.g. MI-Cart, MI-DPMPM, GAIN")->required();
    imp->add_option("--method-config", method_json, "JSON overrides for the method")->check(CLI::ExistingFile);
    imp->add_option("--data", data, "incomplete CSV")->required()->check(CLI::ExistingFile);
    imp->add_option("--dictionary", dict, "name,cardinality CSV")->required()->check(CLI::ExistingFile);
    imp->add_option("-L,--imputations", imputations, "number of completed datasets (profile default otherwise)");
    imp->add_option("--seed", seed, "random seed");
    imp->add_option("--out-dir", out, "output directory")->required();
    imp->add_flag("--paper-scale", paper_scale, "paper-scale iteration counts");

    auto* est = app.add_subcommand("estimate", "cell probabilities and variances per completed dataset");
    est->add_option("--data", files, "completed CSVs")->required()->check(CLI::ExistingFile);
    est->add_option("--dictionary", dict, "name,cardinality CSV")->required()->check(CLI::ExistingFile);
    est->add_option("--arity", arities, "estimand arities")->delimiter(',');
    est->add_option("--out", out, "estimates CSV")->required();

    auto* poo = app.add_subcommand("pool", "combine per-imputation estimates");
    poo->add_option("--estimates", estimates, "CSV with estimand,q,u columns")->required()->check(CLI::ExistingFile);
    poo->add_option("--out", out, "pooled CSV")->required();

    auto* ben = app.add_subcommand("bench", "run a repeated-sampling experiment");
    ben->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    ben->add_flag("--paper-scale", paper_scale, "H=500, n=10000, L=50, MCMC 15000/5000");
    ben->add_option("--out", out, "output directory (overrides the config)");
    ben->add_option("--threads", threads, "worker threads (ORDIMPUTE_THREADS wins)");

    auto* rep = app.add_subcommand("report", "re-render tables from a report JSON");
    rep->add_option("--json", json_in, "report.json")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", out, "output directory (default: next to the JSON)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (inj->parsed()) return cmd_inject(data, dict, scenario, seed, out);
        if (imp->parsed()) return cmd_impute(method, method_json, data, dict, imputations, seed, out, paper_scale);
        if (est->parsed()) return cmd_estimate(files, dict, arities, out);
        if (poo->parsed()) return cmd_pool(estimates, out);
        if (ben->parsed()) return cmd_bench(config, paper_scale, out, threads);
        if (rep->parsed()) return cmd_report(json_in, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
