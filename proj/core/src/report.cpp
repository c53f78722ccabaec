#include "physiome/report.hpp"

#include "physiome/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace physiome::report {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string signed_fixed(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%+.*f", digits, v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw FormatError("bad number '" + s + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw FormatError("bad number '" + s + "'");
    } catch (const std::out_of_range&) {
        throw FormatError("number out of range '" + s + "'");
    }
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

std::string backbone_losses_csv(const std::vector<BackboneHistory>& history) {
    std::string out = "fold,modality,epoch,recon1,recon2,ntxent,total\n";
    for (const auto& h : history) {
        for (const auto& e : h.epochs) {
            out += std::to_string(h.fold) + "," + std::to_string(h.modality) + "," + std::to_string(e.epoch) + "," +
                   num(e.recon1) + "," + num(e.recon2) + "," + num(e.ntxent) + "," + num(e.total) + "\n";
        }
    }
    return out;
}

std::string physiome_losses_csv(const std::vector<PhysioMEHistory>& history) {
    std::string out = "fold,epoch,l_intra,l_missing,l_cross,total\n";
    for (const auto& h : history) {
        for (const auto& e : h.epochs) {
            out += std::to_string(h.fold) + "," + std::to_string(e.epoch) + "," + num(e.intra) + "," +
                   num(e.missing) + "," + num(e.cross) + "," + num(e.total) + "\n";
        }
    }
    return out;
}

std::string physiome_timing_csv(const std::vector<PhysioMEHistory>& history) {
    std::string out = "fold,epoch,wall_seconds\n";
    for (const auto& h : history) {
        for (const auto& e : h.epochs) {
            out += std::to_string(h.fold) + "," + std::to_string(e.epoch) + "," + fixed(e.wall_seconds, 3) + "\n";
        }
    }
    return out;
}

std::string sweep_csv(const SweepReport& r) {
    std::string out = "# strategy=" + r.strategy + " folds=" + std::to_string(r.folds) +
                      " auc=macro_one_vs_rest deltas=" + (r.has_full ? "vs_full" : "none") + "\n";
    out += "scenario";
    for (const auto& n : r.modality_names) out += "," + n;
    out += ",acc,auc,delta_acc,delta_auc\n";
    for (const auto& row : r.rows) {
        out += row.scenario.to_string();
        for (bool o : row.scenario.observed) out += o ? ",1" : ",0";
        out += "," + num(row.acc) + "," + num(row.auc) + "," + num(row.delta_acc) + "," + num(row.delta_auc) + "\n";
    }
    out += "MAV";
    for (std::size_t i = 0; i < r.modality_names.size(); ++i) out += ",";
    out += "," + num(r.mav_acc) + "," + num(r.mav_auc) + "," + num(r.mav_delta_acc) + "," + num(r.mav_delta_auc) + "\n";
    return out;
}

SweepReport parse_sweep_csv(const std::string& text) {
    SweepReport r;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    bool mav = false;
    std::size_t m = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            for (const auto& tok : split(line.substr(1), ' ')) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                const std::string k = tok.substr(0, eq);
                const std::string v = tok.substr(eq + 1);
                if (k == "strategy") r.strategy = v;
                if (k == "folds") r.folds = std::stoi(v);
                if (k == "deltas") r.has_full = v == "vs_full";
            }
            continue;
        }
        const auto cells = split(line, ',');
        if (!header) {
            if (cells.size() < 5 || cells.front() != "scenario") throw FormatError("not a sweep CSV");
            m = cells.size() - 5;
            r.modality_names.assign(cells.begin() + 1, cells.begin() + 1 + static_cast<std::ptrdiff_t>(m));
            header = true;
            continue;
        }
        if (cells.size() != m + 5) throw FormatError("sweep CSV row has " + std::to_string(cells.size()) + " cells");
        const double acc = parse_double(cells[m + 1]);
        const double auc = parse_double(cells[m + 2]);
        const double da = parse_double(cells[m + 3]);
        const double du = parse_double(cells[m + 4]);
        if (cells[0] == "MAV") {
            r.mav_acc = acc;
            r.mav_auc = auc;
            r.mav_delta_acc = da;
            r.mav_delta_auc = du;
            mav = true;
            continue;
        }
        r.rows.push_back({ScenarioMask::parse(cells[0]), acc, auc, da, du});
    }
    if (!header || !mav) throw FormatError("sweep CSV is missing its header or MAV row");
    return r;
}

std::string sweep_markdown(const SweepReport& r) {
    std::string out = "# Missing-modality sweep\n\n";
    out += "Strategy: `" + r.strategy + "`, folds averaged: " + std::to_string(r.folds) +
           ". AUC is the macro one-vs-rest average over classes. ACC and AUC are in percent; parenthesized values "
           "are changes against the full-modality row.\n\n";
    out += "|";
    for (const auto& n : r.modality_names) out += " " + n + " |";
    out += " ACC | AUC |\n|";
    for (std::size_t i = 0; i < r.modality_names.size(); ++i) out += ":-:|";
    out += "--:|--:|\n";
    for (const auto& row : r.rows) {
        out += "|";
        for (bool o : row.scenario.observed) out += o ? " ● |" : " ○ |";
        std::string acc = fixed(100.0 * row.acc, 2);
        std::string auc = fixed(100.0 * row.auc, 2);
        if (r.has_full && !row.scenario.is_full()) {
            acc += " (" + signed_fixed(100.0 * row.delta_acc, 2) + ")";
            auc += " (" + signed_fixed(100.0 * row.delta_auc, 2) + ")";
        }
        out += " " + acc + " | " + auc + " |\n";
    }
    out += "| **MAV** |";
    for (std::size_t i = 1; i < r.modality_names.size(); ++i) out += " |";
    std::string acc = fixed(100.0 * r.mav_acc, 2);
    std::string auc = fixed(100.0 * r.mav_auc, 2);
    if (r.has_full) {
        acc += " (" + fixed(100.0 * r.mav_delta_acc, 2) + ")";
        auc += " (" + fixed(100.0 * r.mav_delta_auc, 2) + ")";
    }
    out += " " + acc + " | " + auc + " |\n";
    return out;
}

std::string linear_eval_csv(const std::vector<FoldMetrics>& folds, const Metrics& mean, const ScenarioMask& scenario) {
    std::string out = "scenario,fold,acc,auc\n";
    for (const auto& f : folds) {
        out += scenario.to_string() + "," + std::to_string(f.fold) + "," + num(f.metrics.acc) + "," +
               num(f.metrics.auc) + "\n";
    }
    out += scenario.to_string() + ",mean," + num(mean.acc) + "," + num(mean.auc) + "\n";
    return out;
}

std::string predictions_csv(const std::vector<Prediction>& predictions) {
    std::size_t classes = predictions.empty() ? 0 : predictions.front().probabilities.size();
    std::string out = "row,label,predicted";
    for (std::size_t c = 0; c < classes; ++c) out += ",p" + std::to_string(c);
    out += "\n";
    for (const auto& p : predictions) {
        out += std::to_string(p.row) + "," + std::to_string(p.label) + "," + std::to_string(p.predicted);
        for (double v : p.probabilities) out += "," + num(v);
        out += "\n";
    }
    return out;
}

std::string line_plot_svg(const std::string& title, const std::vector<Series>& series) {
    const double w = 640, h = 400, left = 60, right = 150, top = 40, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    std::size_t n = 0;
    double lo = 0.0, hi = 1.0;
    bool any = false;
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            lo = any ? std::min(lo, v) : v;
            hi = any ? std::max(hi, v) : v;
            any = true;
        }
    }
    if (!any || hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    auto x_of = [&](std::size_t i) { return left + (n <= 1 ? pw / 2 : pw * static_cast<double>(i) / (n - 1.0)); };
    auto y_of = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        os << "<text x=\"" << left - 6 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">" << fixed(v, 3)
           << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
        os << "<text x=\"" << x_of(i) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << i + 1
           << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = kPalette[k % 6];
        std::string pts;
        for (std::size_t i = 0; i < series[k].values.size(); ++i) {
            if (!std::isfinite(series[k].values[i])) continue;
            pts += fixed(x_of(i), 2) + "," + fixed(y_of(series[k].values[i]), 2) + " ";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
        const double ly = top + 16.0 * static_cast<double>(k) + 8;
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << xml_escape(series[k].name)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string sweep_bars_svg(const SweepReport& r) {
    const double group = 70, left = 50, top = 40, ph = 260;
    const double w = left + group * static_cast<double>(r.rows.size()) + 120, h = top + ph + 60;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">Missing-modality sweep (" << xml_escape(r.strategy)
       << ")</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << w - 110 << "\" y2=\"" << top + ph
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + ph * (1.0 - t / 4.0);
        os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fixed(t / 4.0, 2)
           << "</text>\n";
        os << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << w - 110 << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n";
    }
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const double x0 = left + group * static_cast<double>(i) + 10;
        const double vals[2] = {r.rows[i].acc, r.rows[i].auc};
        for (int b = 0; b < 2; ++b) {
            const double v = std::clamp(vals[b], 0.0, 1.0);
            os << "<rect x=\"" << x0 + 25.0 * b << "\" y=\"" << top + ph * (1.0 - v) << "\" width=\"22\" height=\""
               << ph * v << "\" fill=\"" << kPalette[b] << "\"/>\n";
        }
        os << "<text x=\"" << x0 + 24 << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
           << r.rows[i].scenario.to_string() << "</text>\n";
    }
    const char* names[2] = {"ACC", "AUC"};
    for (int b = 0; b < 2; ++b) {
        const double ly = top + 16.0 * b + 8;
        os << "<rect x=\"" << w - 95 << "\" y=\"" << ly - 6 << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[b]
           << "\"/>\n";
        os << "<text x=\"" << w - 78 << "\" y=\"" << ly + 4 << "\">" << names[b] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

// Averages numeric columns per epoch over every row sharing that epoch.
std::vector<Series> epoch_means(const std::string& csv, const std::vector<std::string>& columns) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty loss CSV");
    const auto header = split(line, ',');
    auto index_of = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw FormatError("loss CSV has no column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t epoch_col = index_of("epoch");
    std::vector<std::size_t> cols;
    for (const auto& c : columns) cols.push_back(index_of(c));
    std::map<int, std::pair<std::vector<double>, int>> acc;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) throw FormatError("ragged loss CSV row");
        auto& slot = acc[std::stoi(cells[epoch_col])];
        slot.first.resize(cols.size(), 0.0);
        for (std::size_t i = 0; i < cols.size(); ++i) slot.first[i] += parse_double(cells[cols[i]]);
        ++slot.second;
    }
    std::vector<Series> out;
    for (const auto& c : columns) out.push_back({c, {}});
    for (const auto& [epoch, s] : acc) {
        for (std::size_t i = 0; i < cols.size(); ++i) out[i].values.push_back(s.first[i] / s.second);
    }
    return out;
}

}  // namespace

std::vector<Series> backbone_series(const std::string& csv_text) {
    return epoch_means(csv_text, {"recon1", "recon2", "ntxent", "total"});
}

std::vector<Series> physiome_series(const std::string& csv_text) {
    return epoch_means(csv_text, {"l_intra", "l_missing", "l_cross", "total"});
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ExitCode::kFailure, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ExitCode::kFailure, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ExitCode::kFailure, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::filesystem::path> render_directory(const std::filesystem::path& in_dir,
                                                    const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(in_dir)) throw Error(ExitCode::kFailure, "no such directory " + in_dir.string());
    std::vector<fs::path> written;
    auto emit = [&](const fs::path& p, const std::string& text) {
        write_text(p, text);
        written.push_back(p);
    };
    if (fs::exists(in_dir / "backbone_losses.csv")) {
        emit(out_dir / "backbone_losses.svg",
             line_plot_svg("DP-NeuroNet pretraining loss", backbone_series(read_text(in_dir / "backbone_losses.csv"))));
    }
    if (fs::exists(in_dir / "physiome_losses.csv")) {
        emit(out_dir / "physiome_losses.svg",
             line_plot_svg("PhysioME training loss", physiome_series(read_text(in_dir / "physiome_losses.csv"))));
    }
    std::vector<fs::path> sweeps;
    for (const auto& entry : fs::directory_iterator(in_dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("sweep", 0) == 0 && entry.path().extension() == ".csv") sweeps.push_back(entry.path());
    }
    std::sort(sweeps.begin(), sweeps.end());
    for (const auto& p : sweeps) {
        const SweepReport r = parse_sweep_csv(read_text(p));
        emit(out_dir / (p.stem().string() + ".md"), sweep_markdown(r));
        emit(out_dir / (p.stem().string() + "_bars.svg"), sweep_bars_svg(r));
    }
    if (written.empty()) throw Error(ExitCode::kFailure, "no loss or sweep CSV files in " + in_dir.string());
    return written;
}

}  // namespace physiome::report
