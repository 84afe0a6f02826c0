#include "alloop/core/extxyz.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "alloop/core/error.hpp"

namespace alloop::extxyz {

namespace {

struct Property {
    std::string name;
    char type;
    int cols;
};

bool needs_quotes(const std::string& v) {
    if (v.empty()) return true;
    for (char c : v)
        if (c == ' ' || c == '\t' || c == '"' || c == '=') return true;
    return false;
}

std::string quote_if_needed(const std::string& v) {
    return needs_quotes(v) ? "\"" + v + "\"" : v;
}

double parse_double(const std::string& tok, std::size_t line, const std::string& what) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    double value = 0.0;
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError(line, "non-numeric " + what + " '" + tok + "'");
    return value;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// key=value tokens; values may be double-quoted and contain spaces.
std::vector<std::pair<std::string, std::string>> tokenize_header(const std::string& line, std::size_t lineno) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t i = 0;
    const std::size_t n = line.size();
    while (i < n) {
        while (i < n && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i >= n) break;
        std::size_t key_start = i;
        while (i < n && line[i] != '=' && line[i] != ' ' && line[i] != '\t') ++i;
        std::string key = line.substr(key_start, i - key_start);
        if (i >= n || line[i] != '=') {
            // Bare token: treated as a flag with value "T".
            out.emplace_back(key, "T");
            continue;
        }
        ++i;  // '='
        std::string value;
        if (i < n && line[i] == '"') {
            ++i;
            std::size_t end = line.find('"', i);
            if (end == std::string::npos) throw ParseError(lineno, "unterminated quote for key " + key);
            value = line.substr(i, end - i);
            i = end + 1;
        } else {
            std::size_t start = i;
            while (i < n && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
            value = line.substr(start, i - start);
        }
        out.emplace_back(key, value);
    }
    return out;
}

std::vector<Property> parse_properties(const std::string& spec, std::size_t lineno) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = spec.find(':', start);
        parts.push_back(spec.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    if (parts.size() % 3 != 0) throw ParseError(lineno, "malformed Properties '" + spec + "'");
    std::vector<Property> props;
    for (std::size_t k = 0; k < parts.size(); k += 3) {
        Property p;
        p.name = parts[k];
        if (parts[k + 1].size() != 1) throw ParseError(lineno, "malformed property type in '" + spec + "'");
        p.type = parts[k + 1][0];
        try {
            p.cols = std::stoi(parts[k + 2]);
        } catch (...) {
            throw ParseError(lineno, "malformed property width in '" + spec + "'");
        }
        props.push_back(p);
    }
    return props;
}

bool parse_bool_token(const std::string& t) {
    return t == "T" || t == "t" || t == "True" || t == "true" || t == "1";
}

std::string encode_impl(const AtomicConfiguration& c, const double* energy, const std::vector<Vec3>* forces,
                        const std::string* label_source) {
    std::ostringstream os;
    os << c.size() << '\n';

    const bool write_lattice = c.any_periodic() || !c.cell.isZero(0.0);
    if (write_lattice) {
        os << "Lattice=\"";
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                if (a || b) os << ' ';
                os << format_double(c.cell(a, b));
            }
        os << "\" ";
    }
    os << "Properties=species:S:1:pos:R:3";
    if (forces) os << ":forces:R:3";
    if (c.velocities) os << ":vel:R:3";
    if (c.region_tags) os << ":region:S:1";
    if (energy) os << " energy=" << format_double(*energy);
    os << " pbc=\"" << (c.periodic[0] ? 'T' : 'F') << ' ' << (c.periodic[1] ? 'T' : 'F') << ' '
       << (c.periodic[2] ? 'T' : 'F') << '"';
    if (!c.structure_id.empty()) os << " structure_id=" << quote_if_needed(c.structure_id);
    if (label_source && !label_source->empty()) os << " label_source=" << quote_if_needed(*label_source);
    if (c.is_validation) os << " is_validation=T";
    for (const auto& [k, v] : c.extra) os << ' ' << k << '=' << quote_if_needed(v);
    os << '\n';

    for (std::size_t i = 0; i < c.size(); ++i) {
        os << c.species[i];
        for (int k = 0; k < 3; ++k) os << ' ' << format_double(c.positions[i][k]);
        if (forces)
            for (int k = 0; k < 3; ++k) os << ' ' << format_double((*forces)[i][k]);
        if (c.velocities)
            for (int k = 0; k < 3; ++k) os << ' ' << format_double((*c.velocities)[i][k]);
        if (c.region_tags) os << ' ' << (*c.region_tags)[i];
        os << '\n';
    }
    return os.str();
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

std::string encode(const AtomicConfiguration& config) { return encode_impl(config, nullptr, nullptr, nullptr); }

std::string encode(const LabeledFrame& frame) {
    return encode_impl(frame.config, &frame.energy, &frame.forces, &frame.label_source);
}

std::string encode(const Frame& frame) {
    return std::visit([](const auto& f) { return encode(f); }, frame);
}

Frame decode(const std::string& block, std::size_t first_line) {
    std::vector<std::string> lines;
    {
        std::istringstream is(block);
        std::string l;
        while (std::getline(is, l)) {
            if (!l.empty() && l.back() == '\r') l.pop_back();
            lines.push_back(l);
        }
    }
    if (lines.empty()) throw ParseError(first_line, "empty frame block");

    std::size_t natoms = 0;
    {
        const std::string t = split_ws(lines[0]).empty() ? "" : split_ws(lines[0])[0];
        auto res = std::from_chars(t.data(), t.data() + t.size(), natoms);
        if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || split_ws(lines[0]).size() != 1)
            throw ParseError(first_line, "malformed atom count '" + lines[0] + "'");
    }
    if (lines.size() < 2) throw ParseError(first_line + 1, "missing header line");
    if (lines.size() < natoms + 2)
        throw ParseError(first_line + lines.size(), "expected " + std::to_string(natoms) + " atom lines, found " +
                                                        std::to_string(lines.size() - 2));

    const std::size_t header_line = first_line + 1;
    AtomicConfiguration cfg;
    std::optional<double> energy;
    std::optional<std::string> label_source;
    bool have_lattice = false;
    std::optional<std::array<bool, 3>> pbc;
    std::vector<Property> props;

    for (const auto& [key, value] : tokenize_header(lines[1], header_line)) {
        if (key == "Lattice") {
            auto toks = split_ws(value);
            if (toks.size() != 9) throw ParseError(header_line, "Lattice needs 9 numbers");
            for (int k = 0; k < 9; ++k) cfg.cell(k / 3, k % 3) = parse_double(toks[k], header_line, "Lattice entry");
            have_lattice = true;
        } else if (key == "Properties") {
            props = parse_properties(value, header_line);
        } else if (key == "energy") {
            energy = parse_double(value, header_line, "energy");
        } else if (key == "pbc") {
            auto toks = split_ws(value);
            if (toks.size() != 3) throw ParseError(header_line, "pbc needs 3 flags");
            pbc = std::array<bool, 3>{parse_bool_token(toks[0]), parse_bool_token(toks[1]), parse_bool_token(toks[2])};
        } else if (key == "structure_id") {
            cfg.structure_id = value;
        } else if (key == "label_source") {
            label_source = value;
        } else if (key == "is_validation") {
            cfg.is_validation = parse_bool_token(value);
        } else {
            cfg.extra[key] = value;
        }
    }
    if (props.empty()) throw ParseError(header_line, "missing Properties");
    cfg.periodic = pbc ? *pbc : std::array<bool, 3>{have_lattice, have_lattice, have_lattice};
    if (cfg.any_periodic() && !have_lattice) throw ParseError(header_line, "periodic frame without Lattice");

    bool has_species = false, has_pos = false, has_forces = false;
    for (const auto& p : props) {
        if (p.name == "species" && p.type == 'S' && p.cols == 1) has_species = true;
        else if (p.name == "pos" && p.type == 'R' && p.cols == 3) has_pos = true;
        else if ((p.name == "forces" || p.name == "force") && p.type == 'R' && p.cols == 3) has_forces = true;
        else if ((p.name == "vel" || p.name == "velo") && p.type == 'R' && p.cols == 3) {}
        else if (p.name == "region" && p.type == 'S' && p.cols == 1) {}
        else throw ParseError(header_line, "unsupported property " + p.name + ":" + p.type + ":" + std::to_string(p.cols));
    }
    if (!has_species || !has_pos) throw ParseError(header_line, "Properties must include species:S:1 and pos:R:3");
    if (has_forces && !energy) throw ParseError(header_line, "forces given without energy");

    std::vector<Vec3> forces;
    for (const auto& p : props) {
        if (p.name == "vel" || p.name == "velo") cfg.velocities.emplace();
        if (p.name == "region") cfg.region_tags.emplace();
    }
    std::size_t ncols = 0;
    for (const auto& p : props) ncols += static_cast<std::size_t>(p.cols);

    for (std::size_t i = 0; i < natoms; ++i) {
        const std::size_t lineno = first_line + 2 + i;
        const auto toks = split_ws(lines[2 + i]);
        if (toks.size() != ncols)
            throw ParseError(lineno, "expected " + std::to_string(ncols) + " columns, found " + std::to_string(toks.size()));
        std::size_t col = 0;
        for (const auto& p : props) {
            if (p.name == "species") {
                cfg.species.push_back(toks[col]);
            } else if (p.name == "region") {
                cfg.region_tags->push_back(toks[col]);
            } else {
                Vec3 v;
                for (int k = 0; k < 3; ++k) v[k] = parse_double(toks[col + k], lineno, p.name);
                if (p.name == "pos") cfg.positions.push_back(v);
                else if (p.name == "forces" || p.name == "force") forces.push_back(v);
                else cfg.velocities->push_back(v);
            }
            col += static_cast<std::size_t>(p.cols);
        }
    }
    try {
        cfg.validate();
    } catch (const GeometryError& e) {
        throw ParseError(header_line, e.what());
    }

    if (has_forces) {
        try {
            return LabeledFrame::make(std::move(cfg), *energy, std::move(forces), label_source.value_or(""));
        } catch (const LabelingError& e) {
            throw ParseError(header_line, e.what());
        }
    }
    if (energy) cfg.extra["energy"] = format_double(*energy);
    if (label_source) cfg.extra["label_source"] = *label_source;
    return cfg;
}

std::vector<Frame> read_all(std::istream& in) {
    std::vector<Frame> frames;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::size_t block_start = lineno;
        std::size_t natoms = 0;
        {
            auto toks = split_ws(line);
            auto res = std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), natoms);
            if (toks.size() != 1 || res.ec != std::errc() || res.ptr != toks[0].data() + toks[0].size())
                throw ParseError(lineno, "malformed atom count '" + line + "'");
        }
        std::string block = line + '\n';
        for (std::size_t k = 0; k < natoms + 1; ++k) {
            if (!std::getline(in, line)) break;
            ++lineno;
            block += line + '\n';
        }
        frames.push_back(decode(block, block_start));
    }
    return frames;
}

std::vector<Frame> read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_all(in);
}

namespace {
template <class T>
void write_many(const std::filesystem::path& path, const std::vector<T>& frames) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& f : frames) out << encode(f);
    if (!out) throw Error("write failed for " + path.string());
}
}  // namespace

void write_file(const std::filesystem::path& path, const std::vector<Frame>& frames) { write_many(path, frames); }
void write_file(const std::filesystem::path& path, const std::vector<LabeledFrame>& frames) { write_many(path, frames); }
void write_file(const std::filesystem::path& path, const std::vector<AtomicConfiguration>& frames) {
    write_many(path, frames);
}

const AtomicConfiguration& config_of(const Frame& frame) {
    if (const auto* lf = std::get_if<LabeledFrame>(&frame)) return lf->config;
    return std::get<AtomicConfiguration>(frame);
}

std::vector<LabeledFrame> labeled_only(const std::vector<Frame>& frames) {
    std::vector<LabeledFrame> out;
    for (const auto& f : frames)
        if (const auto* lf = std::get_if<LabeledFrame>(&f)) out.push_back(*lf);
    return out;
}

}  // namespace alloop::extxyz
