#include "spaars/run.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "spaars/error.hpp"

namespace spaars::run {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string resolve_input(const std::string& p, const std::string& base_dir) {
    fs::path path(p);
    if (path.is_relative() && !base_dir.empty()) path = fs::path(base_dir) / path;
    return fs::absolute(path).lexically_normal().string();
}

std::string cell(const json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_array()) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) s += ';';
            s += cell(v[i]);
        }
        return s;
    }
    return v.dump();
}

json parse_record(const std::string& line, long lineno) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw InputError("metrics line " + std::to_string(lineno) + " is not valid JSON: " + e.what());
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir, const std::string& output_root) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::vector<std::string> known{"dataset", "output_dir", "cvae_model", "checkpoint_every", "train"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("run config: unknown key '" + key + "'");

    RunConfig c;
    try {
        if (!j.contains("dataset") || !j["dataset"].is_string()) throw ConfigError("run config: 'dataset' path is required");
        c.dataset = resolve_input(j["dataset"].get<std::string>(), base_dir);
        if (!j.contains("output_dir") || !j["output_dir"].is_string())
            throw ConfigError("run config: 'output_dir' is required");
        c.output_dir = resolve_output_dir(j["output_dir"].get<std::string>(), output_root);
        if (j.contains("cvae_model") && !j["cvae_model"].is_null())
            c.cvae_model = resolve_input(j["cvae_model"].get<std::string>(), base_dir);
        if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<std::int64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    if (c.checkpoint_every < 0) throw ConfigError("run config: checkpoint_every must be >= 0");
    c.train = curriculum::train_config_from_json(j.contains("train") ? j["train"].dump() : "{}");
    if (!fs::is_regular_file(c.dataset)) throw ConfigError("dataset not found: " + c.dataset);
    if (!c.cvae_model.empty() && !fs::is_regular_file(c.cvae_model))
        throw ConfigError("cvae model not found: " + c.cvae_model);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const fs::path dir = fs::absolute(fs::path(path)).parent_path();
    return parse_run_config(ss.str(), dir.string(), output_root_from_env());
}

std::string to_json(const RunConfig& c) {
    json j;
    j["dataset"] = c.dataset;
    j["output_dir"] = c.output_dir;
    j["cvae_model"] = c.cvae_model.empty() ? json(nullptr) : json(c.cvae_model);
    j["checkpoint_every"] = c.checkpoint_every;
    j["train"] = json::parse(curriculum::to_json(c.train));
    return j.dump(2);
}

std::string output_root_from_env() {
    const char* v = std::getenv(kOutputRootEnv);
    return v ? std::string(v) : std::string();
}

std::string resolve_output_dir(const std::string& dir, const std::string& root) {
    if (dir.empty()) throw ConfigError("output directory must not be empty");
    fs::path p(dir);
    if (p.is_relative() && !root.empty()) p = fs::path(root) / p;
    return fs::absolute(p).lexically_normal().string();
}

const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols{"kind",     "step",      "seed",  "phase",     "alpha",      "mode",
                                               "reason",   "q_raw_mean", "q_z_mean", "sigma_raw", "r_ext", "r_int",
                                               "r_int_ema", "l_bc",     "eval_return", "state"};
    return cols;
}

void export_csv(std::istream& metrics, std::ostream& out) {
    const auto& cols = metrics_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    std::string line;
    long lineno = 0;
    while (std::getline(metrics, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json rec = parse_record(line, lineno);
        for (std::size_t i = 0; i < cols.size(); ++i) {
            if (!rec.contains(cols[i])) throw InputError("metrics line " + std::to_string(lineno) + " lacks '" + cols[i] + "'");
            out << (i ? "," : "") << cell(rec[cols[i]]);
        }
        out << '\n';
    }
}

std::vector<Series> eval_series(std::istream& metrics) {
    std::map<std::uint64_t, Series> by_seed;
    std::string line;
    long lineno = 0;
    while (std::getline(metrics, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json rec = parse_record(line, lineno);
        if (rec.value("kind", "") != "eval" || rec["eval_return"].is_null()) continue;
        const auto seed = rec["seed"].get<std::uint64_t>();
        Series& s = by_seed[seed];
        s.seed = seed;
        s.points.emplace_back(rec["step"].get<std::int64_t>(), rec["eval_return"].get<double>());
    }
    std::vector<Series> out;
    for (auto& [_, s] : by_seed) {
        std::stable_sort(s.points.begin(), s.points.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        out.push_back(std::move(s));
    }
    return out;
}

void export_svg_lines(const std::vector<Series>& series, std::ostream& out) {
    constexpr double kW = 640, kH = 400, kPad = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            const auto xd = static_cast<double>(x);
            if (first) {
                x0 = x1 = xd;
                y0 = y1 = y;
                first = false;
            }
            x0 = std::min(x0, xd);
            x1 = std::max(x1, xd);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
    auto py = [&](double y) { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    out << std::setprecision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">step</text>\n";
    out << "<text x=\"15\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 15 " << kH / 2
        << ")\" text-anchor=\"middle\">eval_return</text>\n";
    out << "<text x=\"" << kPad << "\" y=\"" << kH - kPad + 15 << "\">" << x0 << "</text>\n";
    out << "<text x=\"" << kW - kPad << "\" y=\"" << kH - kPad + 15 << "\" text-anchor=\"end\">" << x1 << "</text>\n";
    out << "<text x=\"" << kPad - 5 << "\" y=\"" << py(y0) << "\" text-anchor=\"end\">" << y0 << "</text>\n";
    out << "<text x=\"" << kPad - 5 << "\" y=\"" << py(y1) << "\" text-anchor=\"end\">" << y1 << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        out << "<polyline data-seed=\"" << series[i].seed << "\" fill=\"none\" stroke=\"" << palette[i % 6]
            << "\" points=\"";
        for (std::size_t p = 0; p < series[i].points.size(); ++p)
            out << (p ? " " : "") << px(static_cast<double>(series[i].points[p].first)) << ','
                << py(series[i].points[p].second);
        out << "\"/>\n";
    }
    out << "</svg>\n";
}

std::string heatmap_filename(std::int64_t step) { return "heatmap_" + std::to_string(step) + ".csv"; }

std::vector<std::string> heatmap_files(const std::string& run_dir) {
    if (!fs::is_directory(run_dir)) throw InputError("not a directory: " + run_dir);
    const std::regex pattern(R"(heatmap_(\d+)\.csv)");
    std::vector<std::pair<std::int64_t, std::string>> found;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoll(m[1].str()), entry.path().string());
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> out;
    for (auto& [_, p] : found) out.push_back(p);
    return out;
}

}  // namespace spaars::run
