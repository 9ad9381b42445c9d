#include "fecg/signal_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fecg {

namespace fs = std::filesystem;
using json = nlohmann::json;

void Record::validate() const {
    if (fs <= 0) throw ArgumentError("record " + name + ": sampling rate must be positive");
    if (!channel_names.empty() && static_cast<Eigen::Index>(channel_names.size()) != samples.cols())
        throw ArgumentError("record " + name + ": channel name count does not match channel count");
    if (!samples.allFinite()) throw ArgumentError("record " + name + ": samples contain NaN or Inf");
    const double duration_ms = 1000.0 * static_cast<double>(samples.rows()) / fs;
    for (const auto &[kind, peaks] : annotations) {
        if (!peaks.empty() && peaks.times().back() > duration_ms)
            throw ArgumentError("record " + name + ": annotation '" + kind + "' extends past the record end");
    }
}

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split(const std::string &line, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(trim(cell));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

std::vector<std::string> split_ws(const std::string &line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

bool parse_double(const std::string &text, double &out) {
    const char *first = text.data();
    const char *last = first + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

fs::path sidecar(const fs::path &path, const std::string &suffix) {
    return path.parent_path() / (path.stem().string() + suffix);
}

std::ifstream open_or_throw(const fs::path &path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

Record load_csv(const fs::path &path) {
    auto in = open_or_throw(path);
    Record rec;
    rec.name = path.stem().string();
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) throw ParseError(path.string(), 1, "empty file");
    ++line_no;
    line = trim(line);
    if (line.rfind("fs=", 0) != 0) throw ParseError(path.string(), line_no, "expected header 'fs=<int>'");
    {
        const auto value = line.substr(3);
        int fs_value = 0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), fs_value);
        if (ec != std::errc() || ptr != value.data() + value.size() || fs_value <= 0)
            throw ParseError(path.string(), line_no, "sampling rate must be a positive integer");
        rec.fs = fs_value;
    }
    if (!std::getline(in, line)) throw ParseError(path.string(), 2, "missing channel-name line");
    ++line_no;
    rec.channel_names = split(trim(line), ',');
    const auto channels = rec.channel_names.size();
    if (channels == 0 || rec.channel_names.front().empty())
        throw ParseError(path.string(), line_no, "no channel names");

    std::vector<double> values;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (cells.size() != channels)
            throw ParseError(path.string(), line_no,
                             "ragged row: expected " + std::to_string(channels) + " values, got " +
                                 std::to_string(cells.size()));
        for (const auto &cell : cells) {
            double v = 0;
            if (!parse_double(cell, v)) throw ParseError(path.string(), line_no, "not a number: '" + cell + "'");
            if (!std::isfinite(v)) throw ParseError(path.string(), line_no, "non-finite sample");
            values.push_back(v);
        }
    }
    const auto rows = static_cast<Eigen::Index>(values.size() / channels);
    rec.samples = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, static_cast<Eigen::Index>(channels));
    return rec;
}

struct WfdbSignal {
    std::string file;
    double gain = 200.0;
    double baseline = 0.0;
    std::string description;
};

Record load_wfdb(const fs::path &header_path) {
    auto in = open_or_throw(header_path);
    const auto hp = header_path.string();
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> record_line;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        record_line = split_ws(line);
        break;
    }
    if (record_line.size() < 2) throw ParseError(hp, line_no, "malformed record line");
    if (record_line[0].find('/') != std::string::npos)
        throw ParseError(hp, line_no, "unsupported format: multi-segment records");

    Record rec;
    rec.name = record_line[0];
    int nsig = 0;
    try {
        nsig = std::stoi(record_line[1]);
    } catch (...) {
        throw ParseError(hp, line_no, "bad signal count");
    }
    if (nsig <= 0) throw ParseError(hp, line_no, "bad signal count");
    double fs_value = 250.0;
    if (record_line.size() > 2) {
        auto fs_text = record_line[2].substr(0, record_line[2].find_first_of("/("));
        if (!parse_double(fs_text, fs_value) || fs_value <= 0) throw ParseError(hp, line_no, "bad sampling rate");
    }
    if (std::abs(fs_value - std::round(fs_value)) > 1e-9)
        throw ParseError(hp, line_no, "unsupported format: non-integer sampling rate");
    rec.fs = static_cast<int>(std::lround(fs_value));
    long long nsamp = -1;
    if (record_line.size() > 3) {
        try {
            nsamp = std::stoll(record_line[3]);
        } catch (...) {
            throw ParseError(hp, line_no, "bad sample count");
        }
    }

    std::vector<WfdbSignal> sigs;
    while (static_cast<int>(sigs.size()) < nsig && std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        auto tok = split_ws(line);
        if (tok.size() < 2) throw ParseError(hp, line_no, "malformed signal line");
        WfdbSignal s;
        s.file = tok[0];
        auto fmt = tok[1].substr(0, tok[1].find_first_of("x:+"));
        if (fmt != "16") throw ParseError(hp, line_no, "unsupported format: only WFDB format 16 is supported");
        if (tok[1].find_first_of("x:+") != std::string::npos)
            throw ParseError(hp, line_no, "unsupported format: sample skew/offset modifiers");
        bool has_baseline = false;
        if (tok.size() > 2) {
            auto g = tok[2];
            auto units_at = g.find('/');
            if (units_at != std::string::npos) g = g.substr(0, units_at);
            auto paren = g.find('(');
            if (paren != std::string::npos) {
                auto close = g.find(')', paren);
                if (close == std::string::npos || !parse_double(g.substr(paren + 1, close - paren - 1), s.baseline))
                    throw ParseError(hp, line_no, "bad baseline");
                has_baseline = true;
                g = g.substr(0, paren);
            }
            if (!parse_double(g, s.gain)) throw ParseError(hp, line_no, "bad gain");
            if (s.gain == 0) s.gain = 200.0;
        }
        if (tok.size() > 4 && !has_baseline) {
            double adczero = 0;
            if (!parse_double(tok[4], adczero)) throw ParseError(hp, line_no, "bad adc zero");
            s.baseline = adczero;
        }
        if (tok.size() > 8) {
            std::string desc;
            for (std::size_t k = 8; k < tok.size(); ++k) desc += (k > 8 ? " " : "") + tok[k];
            s.description = desc;
        }
        sigs.push_back(s);
    }
    if (static_cast<int>(sigs.size()) != nsig) throw ParseError(hp, line_no, "missing signal lines");
    for (const auto &s : sigs)
        if (s.file != sigs.front().file)
            throw ParseError(hp, line_no, "unsupported format: signals spread over several files");

    const auto dat_path = header_path.parent_path() / sigs.front().file;
    auto dat = open_or_throw(dat_path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(dat)), std::istreambuf_iterator<char>());
    const auto frame_bytes = static_cast<std::size_t>(2 * nsig);
    const auto frames_in_file = static_cast<long long>(bytes.size() / frame_bytes);
    if (nsamp < 0) nsamp = frames_in_file;
    if (nsamp > frames_in_file) throw DataError(dat_path.string() + ": file shorter than header sample count");

    rec.samples.resize(nsamp, nsig);
    for (long long i = 0; i < nsamp; ++i) {
        for (int j = 0; j < nsig; ++j) {
            const auto at = static_cast<std::size_t>(i) * frame_bytes + static_cast<std::size_t>(2 * j);
            const auto lo = static_cast<std::uint8_t>(bytes[at]);
            const auto hi = static_cast<std::uint8_t>(bytes[at + 1]);
            const auto raw = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
            if (raw == -32768) throw DataError(dat_path.string() + ": missing samples are not supported");
            rec.samples(i, j) = (raw - sigs[j].baseline) / sigs[j].gain;
        }
    }
    for (int j = 0; j < nsig; ++j)
        rec.channel_names.push_back(sigs[j].description.empty() ? "ch" + std::to_string(j + 1) : sigs[j].description);

    const auto fqrs = sidecar(header_path, ".fqrs.txt");
    if (fs::exists(fqrs)) {
        auto fin = open_or_throw(fqrs);
        std::vector<double> times;
        std::size_t ln = 0;
        while (std::getline(fin, line)) {
            ++ln;
            line = trim(line);
            if (line.empty()) continue;
            double idx = 0;
            if (!parse_double(line, idx)) throw ParseError(fqrs.string(), ln, "not a sample index");
            const double t = idx * 1000.0 / rec.fs;
            if (!times.empty() && !(t > times.back()))
                throw ParseError(fqrs.string(), ln, "annotation times are not strictly increasing");
            times.push_back(t);
        }
        rec.annotations[ann::fetal_r] = PeakList(std::move(times));
    }
    return rec;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw InvariantError("signal-io", "to_chars failed");
    return std::string(buf, ptr);
}

Annotations load_annotations(const fs::path &path) {
    auto in = open_or_throw(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error &e) {
        std::size_t line = 1 + static_cast<std::size_t>(
                                   std::count(text.begin(), text.begin() + std::min(e.byte, text.size()), '\n'));
        throw ParseError(path.string(), line, std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError(path.string(), 1, "annotation file must be a JSON object");
    auto line_of = [&](const std::string &key) {
        auto at = text.find("\"" + key + "\"");
        if (at == std::string::npos) return std::size_t{1};
        return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(at), '\n'));
    };
    Annotations out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_array()) throw ParseError(path.string(), line_of(it.key()), "'" + it.key() + "' is not an array");
        std::vector<double> times;
        for (std::size_t i = 0; i < it.value().size(); ++i) {
            const auto &v = it.value()[i];
            if (!v.is_number()) throw ParseError(path.string(), line_of(it.key()), "'" + it.key() + "' has a non-numeric entry");
            const double t = v.get<double>();
            if (t < 0 || (!times.empty() && !(t > times.back())))
                throw ParseError(path.string(), line_of(it.key()),
                                 "'" + it.key() + "' is not strictly increasing at index " + std::to_string(i));
            times.push_back(t);
        }
        out.emplace(it.key(), PeakList(std::move(times)));
    }
    return out;
}

void save_annotations(const Annotations &annotations, const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "{";
    bool first = true;
    for (const auto &[kind, peaks] : annotations) {
        out << (first ? "\n" : ",\n") << "  " << json(kind).dump() << ": [";
        for (std::size_t i = 0; i < peaks.size(); ++i) out << (i ? ", " : "") << format_double(peaks[i]);
        out << "]";
        first = false;
    }
    out << "\n}\n";
}

Record load_record(const fs::path &path, RecordFormat format) {
    if (!fs::exists(path)) throw DataError("no such file: " + path.string());
    Record rec = format == RecordFormat::csv ? load_csv(path) : load_wfdb(path);
    const auto ann_path = sidecar(path, ".ann.json");
    if (fs::exists(ann_path)) {
        for (auto &[kind, peaks] : load_annotations(ann_path)) rec.annotations.insert_or_assign(kind, std::move(peaks));
    }
    try {
        rec.validate();
    } catch (const ArgumentError &e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return rec;
}

Record load_record(const fs::path &path) {
    const auto ext = path.extension().string();
    if (ext == ".hea") return load_record(path, RecordFormat::wfdb);
    if (ext == ".csv") return load_record(path, RecordFormat::csv);
    throw DataError("unsupported format: " + path.string() + " (expected .csv or .hea)");
}

void save_matrix_csv(const Eigen::MatrixXd &m, const fs::path &path, const std::vector<std::string> &header) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    if (!header.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
        out << '\n';
    }
    std::string row;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        row.clear();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) row += ',';
            row += format_double(m(i, j));
        }
        out << row << '\n';
    }
}

Eigen::MatrixXd load_matrix_csv(const fs::path &path, bool has_header) {
    auto in = open_or_throw(path);
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> values;
    std::size_t cols = 0;
    if (has_header && std::getline(in, line)) ++line_no;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (cols == 0) cols = cells.size();
        if (cells.size() != cols) throw ParseError(path.string(), line_no, "ragged row");
        for (const auto &cell : cells) {
            double v = 0;
            if (!parse_double(cell, v) || !std::isfinite(v))
                throw ParseError(path.string(), line_no, "not a finite number: '" + cell + "'");
            values.push_back(v);
        }
    }
    if (cols == 0) throw ParseError(path.string(), line_no, "empty matrix");
    const auto rows = static_cast<Eigen::Index>(values.size() / cols);
    return Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, static_cast<Eigen::Index>(cols));
}

fs::path save_record(const Record &record, const fs::path &dir) {
    fs::create_directories(dir);
    const auto path = dir / (record.name + ".csv");
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "fs=" << record.fs << '\n';
    for (Eigen::Index j = 0; j < record.channel_count(); ++j) {
        out << (j ? "," : "")
            << (static_cast<std::size_t>(j) < record.channel_names.size() ? record.channel_names[j]
                                                                          : "ch" + std::to_string(j + 1));
    }
    out << '\n';
    std::string row;
    for (Eigen::Index i = 0; i < record.length(); ++i) {
        row.clear();
        for (Eigen::Index j = 0; j < record.channel_count(); ++j) {
            if (j) row += ',';
            row += format_double(record.samples(i, j));
        }
        out << row << '\n';
    }
    out.close();
    if (!record.annotations.empty()) save_annotations(record.annotations, dir / (record.name + ".ann.json"));
    return path;
}

namespace {

double kaiser(double t, double beta) {
    if (std::abs(t) >= 1.0) return 0.0;
    return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - t * t)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = M_PI * x;
    return std::sin(px) / px;
}

} // namespace

Signal resample(const Signal &x, int fs, int target_fs) {
    if (fs <= 0 || target_fs <= 0) throw ArgumentError("resample: sampling rates must be positive");
    if (fs == target_fs) return x;
    const auto n_in = x.size();
    if (n_in == 0) return Signal();

    const int g = std::gcd(fs, target_fs);
    const long long up = target_fs / g;  // L
    const long long down = fs / g;       // M
    const double ratio = std::min(1.0, static_cast<double>(target_fs) / fs);
    // Passband to 0.6, stopband from 1.0 of the lower Nyquist rate.
    const double cutoff = 0.8 * ratio;
    const double beta = 14.0;
    const int half = static_cast<int>(std::ceil(32.0 / ratio));

    const auto n_out = static_cast<Eigen::Index>(std::llround(static_cast<double>(n_in) * target_fs / fs));
    auto at = [&](long long k) {
        // symmetric reflection about the end samples
        const long long n = n_in;
        if (n == 1) return x(0);
        const long long period = 2 * (n - 1);
        k %= period;
        if (k < 0) k += period;
        if (k >= n) k = period - k;
        return x(static_cast<Eigen::Index>(k));
    };

    // Polyphase table: one tap set per output phase (m*M mod L).
    const bool tabulate = up <= 4096;
    std::vector<double> table;
    if (tabulate) {
        table.resize(static_cast<std::size_t>(up * 2 * half));
        for (long long ph = 0; ph < up; ++ph) {
            const double frac = static_cast<double>(ph) / static_cast<double>(up);
            for (int k = -half + 1; k <= half; ++k) {
                const double d = frac - k;
                table[static_cast<std::size_t>(ph * 2 * half + (k + half - 1))] =
                    cutoff * sinc(cutoff * d) * kaiser(d / half, beta);
            }
        }
    }

    Signal y(n_out);
    for (Eigen::Index m = 0; m < n_out; ++m) {
        const long long num = static_cast<long long>(m) * down;
        const long long base = num / up;
        const long long ph = num % up;
        double acc = 0.0;
        if (tabulate) {
            const double *taps = &table[static_cast<std::size_t>(ph * 2 * half)];
            if (base - half + 1 >= 0 && base + half < n_in) {
                const double *src = x.data() + base - half + 1;
                for (int k = 0; k < 2 * half; ++k) acc += taps[k] * src[k];
            } else {
                for (int k = -half + 1; k <= half; ++k) acc += taps[k + half - 1] * at(base + k);
            }
        } else {
            const double frac = static_cast<double>(ph) / static_cast<double>(up);
            for (int k = -half + 1; k <= half; ++k) {
                const double d = frac - k;
                acc += cutoff * sinc(cutoff * d) * kaiser(d / half, beta) * at(base + k);
            }
        }
        y(m) = acc;
    }
    return y;
}

Record resample(const Record &record, int target_fs) {
    if (target_fs <= 0) throw ArgumentError("resample: target rate must be positive");
    if (record.fs == target_fs) return record;
    Record out = record;
    out.fs = target_fs;
    Eigen::MatrixXd samples;
    for (Eigen::Index j = 0; j < record.channel_count(); ++j) {
        Signal ch = resample(Signal(record.samples.col(j)), record.fs, target_fs);
        if (j == 0) samples.resize(ch.size(), record.channel_count());
        samples.col(j) = ch;
    }
    out.samples = std::move(samples);
    return out;
}

} // namespace fecg
