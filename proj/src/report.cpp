#include "ksteer/report.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "ksteer/binary_io.hpp"
#include "ksteer/error.hpp"

namespace ksteer {

namespace {

std::string shortest(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string label_name(std::size_t id, const LabelNames& names) {
    return id < names.size() ? names[id] : std::to_string(id);
}

// CSV fields never need quoting unless they contain these characters.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    return fields;
}

template <class T>
T parse_number(const std::string& s, std::size_t line) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("bad CSV number \"" + s + "\"", line);
    }
    return v;
}

constexpr std::string_view kHeader = "method,dataset,k,labels,layer,alpha,steps,mean_delta,score";

}  // namespace

std::string format_labels(const LossSpec& combo, const LabelNames& names) {
    std::string out;
    for (const auto t : combo.targets) {
        if (!out.empty()) out += ';';
        out += "+" + label_name(t, names);
    }
    for (const auto a : combo.avoids) {
        if (!out.empty()) out += ';';
        out += "-" + label_name(a, names);
    }
    return out;
}

std::vector<ReportRow> report_rows(std::span<const EvalOutcome> outcomes, const LabelNames& names) {
    std::vector<ReportRow> rows;
    using Key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
    struct Acc {
        double delta = 0.0, alpha = 0.0, score = 0.0;
        std::size_t count = 0, scored = 0;
        std::set<std::size_t> steps;
    };
    std::map<Key, Acc> groups;
    for (const auto& o : outcomes) {
        ReportRow r;
        r.method = std::string(method_name(o.method));
        r.dataset = o.dataset;
        r.k = o.label_combo.targets.size() + o.label_combo.avoids.size();
        r.labels = format_labels(o.label_combo, names);
        r.layer = o.layer;
        r.alpha = o.alpha;
        r.steps = o.steps;
        r.mean_delta = o.mean_delta;
        r.score = o.score;
        auto& acc = groups[{r.method, r.dataset, r.k, r.layer}];
        acc.delta += o.mean_delta;
        acc.alpha += o.alpha;
        ++acc.count;
        acc.steps.insert(o.steps);
        if (o.score) {
            acc.score += *o.score;
            ++acc.scored;
        }
        rows.push_back(std::move(r));
    }
    for (const auto& [key, acc] : groups) {
        ReportRow r;
        std::tie(r.method, r.dataset, r.k, r.layer) = key;
        r.labels = "*";
        const auto n = static_cast<double>(acc.count);
        r.alpha = acc.alpha / n;
        r.steps = acc.steps.size() == 1 ? *acc.steps.begin() : 0;
        r.mean_delta = acc.delta / n;
        if (acc.scored) r.score = acc.score / static_cast<double>(acc.scored);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_csv(std::span<const ReportRow> rows) {
    std::string out(kHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += csv_field(r.method) + ',' + csv_field(r.dataset) + ',' + std::to_string(r.k) + ',' +
               csv_field(r.labels) + ',' + std::to_string(r.layer) + ',' + shortest(r.alpha) + ',' +
               std::to_string(r.steps) + ',' + shortest(r.mean_delta) + ',' +
               (r.score ? shortest(*r.score) : std::string()) + '\n';
    }
    return out;
}

std::vector<ReportRow> parse_csv(std::string_view text) {
    std::vector<ReportRow> rows;
    std::size_t line_no = 0;
    bool header = true;
    while (!text.empty()) {
        // Quoted fields in this schema never contain newlines.
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (header) {
            if (line != kHeader) throw ParseError("unexpected CSV header", 0);
            header = false;
            continue;
        }
        ++line_no;
        const auto f = split_csv_line(line);
        if (f.size() != 9) throw ParseError("expected 9 CSV fields", line_no);
        ReportRow r;
        r.method = f[0];
        r.dataset = f[1];
        r.k = parse_number<std::size_t>(f[2], line_no);
        r.labels = f[3];
        r.layer = parse_number<std::size_t>(f[4], line_no);
        r.alpha = parse_number<double>(f[5], line_no);
        r.steps = parse_number<std::size_t>(f[6], line_no);
        r.mean_delta = parse_number<double>(f[7], line_no);
        if (!f[8].empty()) r.score = parse_number<double>(f[8], line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_markdown(std::span<const EvalOutcome> outcomes, const LabelNames& names) {
    std::ostringstream md;
    // Table 1 shape: one row per method, one column per (dataset, K); each
    // cell averages mean_delta over the label combinations of that size.
    using Col = std::pair<std::string, std::size_t>;
    std::set<Col> cols;
    std::vector<std::string> methods;
    std::map<std::pair<std::string, Col>, std::pair<double, std::size_t>> cells;
    for (const auto& o : outcomes) {
        const std::string m(method_name(o.method));
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
        const Col c{o.dataset.empty() ? "-" : o.dataset, o.label_combo.targets.size() + o.label_combo.avoids.size()};
        cols.insert(c);
        auto& cell = cells[{m, c}];
        cell.first += o.mean_delta;
        ++cell.second;
    }
    md << "## Mean change in target probability\n\n| Method |";
    for (const auto& [ds, k] : cols) md << ' ' << ds << " K=" << k << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) md << "---:|";
    md << '\n';
    std::map<Col, double> column_best;
    for (const auto& [key, cell] : cells) {
        const double mean = cell.first / static_cast<double>(cell.second);
        auto it = column_best.find(key.second);
        if (it == column_best.end() || mean > it->second) column_best[key.second] = mean;
    }
    for (const auto& m : methods) {
        md << "| " << m << " |";
        for (const auto& c : cols) {
            const auto it = cells.find({m, c});
            if (it == cells.end()) {
                md << " – |";
                continue;
            }
            const double mean = it->second.first / static_cast<double>(it->second.second);
            const bool best = methods.size() > 1 && mean == column_best[c];
            md << ' ' << (best ? "**" : "") << fixed3(mean) << (best ? "**" : "") << " |";
        }
        md << '\n';
    }

    // Table 5 shape: one row per (dataset, label combination), one column per method.
    bool any_score = false;
    for (const auto& o : outcomes) any_score = any_score || o.score.has_value();
    if (any_score) {
        using Row = std::pair<std::string, std::string>;
        std::vector<Row> rows;
        std::map<std::pair<Row, std::string>, double> scores;
        for (const auto& o : outcomes) {
            if (!o.score) continue;
            const Row r{o.dataset.empty() ? "-" : o.dataset, format_labels(o.label_combo, names)};
            if (std::find(rows.begin(), rows.end(), r) == rows.end()) rows.push_back(r);
            scores[{r, std::string(method_name(o.method))}] = *o.score;
        }
        md << "\n## Steering score\n\n| Dataset | Labels |";
        for (const auto& m : methods) md << ' ' << m << " |";
        md << "\n|---|---|";
        for (std::size_t i = 0; i < methods.size(); ++i) md << "---:|";
        md << '\n';
        for (const auto& r : rows) {
            md << "| " << r.first << " | " << r.second << " |";
            for (const auto& m : methods) {
                const auto it = scores.find({r, m});
                md << ' ' << (it == scores.end() ? std::string("–") : fixed3(it->second)) << " |";
            }
            md << '\n';
        }
    }
    return md.str();
}

void emit_report(std::span<const EvalOutcome> outcomes, ReportFormat format,
                 const std::filesystem::path& path, const LabelNames& names) {
    if (outcomes.empty()) throw InvalidInput("report: no outcomes");
    const std::string text = format == ReportFormat::csv
                                 ? render_csv(report_rows(outcomes, names))
                                 : render_markdown(outcomes, names);
    io::write_text_file(path, text);
}

}  // namespace ksteer
