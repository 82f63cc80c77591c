#include "fieldgen/moltypes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "fieldgen/errors.hpp"
#include "fieldgen/rng.hpp"

namespace fieldgen {

namespace {
constexpr const char* kSymbols[kElementCount] = {"C", "O", "N", "S", "F", "Cl", "P", "Br"};
}

const char* element_symbol(Element e) { return kSymbols[static_cast<int>(e)]; }

std::optional<Element> element_from_symbol(std::string_view s) {
    for (int i = 0; i < kElementCount; ++i)
        if (s == kSymbols[i]) return static_cast<Element>(i);
    return std::nullopt;
}

Vec3 Molecule::centroid() const {
    Vec3 c;
    for (const auto& a : atoms) c += a.position;
    return c * (1.0 / static_cast<double>(atoms.size()));
}

Vec3 Molecule::bbox_center() const {
    Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (const auto& a : atoms) {
        lo.x = std::min(lo.x, a.position.x);
        lo.y = std::min(lo.y, a.position.y);
        lo.z = std::min(lo.z, a.position.z);
        hi.x = std::max(hi.x, a.position.x);
        hi.y = std::max(hi.y, a.position.y);
        hi.z = std::max(hi.z, a.position.z);
    }
    return (lo + hi) * 0.5;
}

MoleculeValidity validate_molecule(const Molecule& m, double min_dist) {
    MoleculeValidity v;
    v.non_empty = !m.atoms.empty();
    for (const auto& a : m.atoms) {
        if (!std::isfinite(a.position.x) || !std::isfinite(a.position.y) ||
            !std::isfinite(a.position.z)) {
            v.finite = false;
        }
    }
    const int n = m.size();
    for (int i = 0; i < n && v.min_distance_ok; ++i)
        for (int j = i + 1; j < n; ++j)
            if (distance(m.atoms[i].position, m.atoms[j].position) < min_dist) {
                v.min_distance_ok = false;
                break;
            }
    return v;
}

void validate_complex(const Complex& cx, int modality_count) {
    if (cx.modality < 0 || cx.modality >= modality_count)
        throw ParseError("modality " + std::to_string(cx.modality) +
                         " out of range for modality count " + std::to_string(modality_count));
    if (cx.binder.atoms.empty()) throw ParseError("complex has empty binder");
    if (cx.target.atoms.empty()) throw ParseError("complex has empty target");
}

bool RigidTransform::valid() const {
    Mat3 should_be_identity = rotation.transpose() * rotation;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double want = (i == j) ? 1.0 : 0.0;
            if (std::abs(should_be_identity(i, j) - want) > 1e-9) return false;
        }
    return std::abs(rotation.det() - 1.0) <= 1e-9;
}

// --- parsing ----------------------------------------------------------------

namespace {

double parse_double_token(const std::string& tok, int line_no) {
    const char* begin = tok.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + tok.size() || tok.empty())
        throw ParseError("line " + std::to_string(line_no) + ": malformed number '" + tok + "'");
    return v;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

bool is_blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

Atom parse_atom_line(const std::string& line, int line_no) {
    auto toks = split_ws(line);
    if (toks.size() != 4)
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected `ELEMENT x y z`, got '" + line + "'");
    auto el = element_from_symbol(toks[0]);
    if (!el)
        throw ParseError("line " + std::to_string(line_no) + ": unknown element '" + toks[0] + "'");
    Atom a;
    a.element = *el;
    a.position = {parse_double_token(toks[1], line_no), parse_double_token(toks[2], line_no),
                  parse_double_token(toks[3], line_no)};
    return a;
}

}  // namespace

Molecule parse_molecule(const std::string& text) {
    Molecule m;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        if (is_blank_or_comment(line)) continue;
        m.atoms.push_back(parse_atom_line(line, line_no));
    }
    if (m.atoms.empty()) throw ParseError("empty molecule file");
    return m;
}

std::string write_molecule(const Molecule& m) {
    std::string out;
    char buf[128];
    for (const auto& a : m.atoms) {
        std::snprintf(buf, sizeof(buf), "%s %.9f %.9f %.9f\n", element_symbol(a.element),
                      a.position.x, a.position.y, a.position.z);
        out += buf;
    }
    return out;
}

Complex parse_complex(const std::string& text) {
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    enum Section { kNone, kBinder, kTarget } section = kNone;
    bool saw_modality = false, saw_binder = false, saw_target = false;
    Complex cx;
    while (std::getline(ss, line)) {
        ++line_no;
        if (is_blank_or_comment(line)) continue;
        auto toks = split_ws(line);
        if (toks[0] == "[MODALITY]") {
            if (saw_modality) throw ParseError("duplicate [MODALITY] section");
            if (toks.size() != 2)
                throw ParseError("line " + std::to_string(line_no) + ": [MODALITY] needs an id");
            double v = parse_double_token(toks[1], line_no);
            if (v != std::floor(v) || v < 0)
                throw ParseError("line " + std::to_string(line_no) + ": bad modality id");
            cx.modality = static_cast<int>(v);
            saw_modality = true;
            section = kNone;
        } else if (toks[0] == "[BINDER]") {
            if (saw_binder) throw ParseError("duplicate [BINDER] section");
            saw_binder = true;
            section = kBinder;
        } else if (toks[0] == "[TARGET]") {
            if (saw_target) throw ParseError("duplicate [TARGET] section");
            saw_target = true;
            section = kTarget;
        } else {
            if (section == kNone)
                throw ParseError("line " + std::to_string(line_no) + ": atom line outside section");
            Atom a = parse_atom_line(line, line_no);
            (section == kBinder ? cx.binder : cx.target).atoms.push_back(a);
        }
    }
    if (!saw_modality) throw ParseError("missing [MODALITY] section");
    if (!saw_binder) throw ParseError("missing [BINDER] section");
    if (!saw_target) throw ParseError("missing [TARGET] section");
    if (cx.binder.atoms.empty()) throw ParseError("[BINDER] section has no atoms");
    if (cx.target.atoms.empty()) throw ParseError("[TARGET] section has no atoms");
    return cx;
}

std::string write_complex(const Complex& cx) {
    std::string out = "[MODALITY] " + std::to_string(cx.modality) + "\n";
    out += "[BINDER]\n";
    out += write_molecule(cx.binder);
    out += "[TARGET]\n";
    out += write_molecule(cx.target);
    return out;
}

namespace {
std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}
void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << text;
    if (!f) throw IoError("write failed for " + path);
}
}  // namespace

Molecule read_molecule_file(const std::string& path) { return parse_molecule(slurp(path)); }
void write_molecule_file(const std::string& path, const Molecule& m) { spit(path, write_molecule(m)); }
Complex read_complex_file(const std::string& path) { return parse_complex(slurp(path)); }
void write_complex_file(const std::string& path, const Complex& cx) { spit(path, write_complex(cx)); }

// --- transforms ---------------------------------------------------------------

Molecule apply_transform(const Molecule& m, const RigidTransform& t) {
    Molecule out = m;
    for (auto& a : out.atoms) a.position = t.rotation.apply(a.position) + t.translation;
    return out;
}

RigidTransform random_rigid_transform(Rng& rng, double max_translation) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double az = rng.uniform(0.0, kTwoPi);
    double ay = rng.uniform(0.0, kTwoPi);
    double ax = rng.uniform(0.0, kTwoPi);
    RigidTransform t;
    t.rotation = Mat3::rot_z(az) * Mat3::rot_y(ay) * Mat3::rot_x(ax);
    t.translation = {rng.uniform(-max_translation, max_translation),
                     rng.uniform(-max_translation, max_translation),
                     rng.uniform(-max_translation, max_translation)};
    return t;
}

RigidTransform random_rigid_transform(uint64_t seed, double max_translation) {
    Rng rng(seed);
    return random_rigid_transform(rng, max_translation);
}

// --- toy generator -------------------------------------------------------------

namespace {

Vec3 random_unit(Rng& rng) {
    // Marsaglia rejection on the unit ball surface.
    for (;;) {
        double x = rng.uniform(-1.0, 1.0);
        double y = rng.uniform(-1.0, 1.0);
        double z = rng.uniform(-1.0, 1.0);
        double n2 = x * x + y * y + z * z;
        if (n2 > 1e-6 && n2 <= 1.0) {
            double inv = 1.0 / std::sqrt(n2);
            return {x * inv, y * inv, z * inv};
        }
    }
}

Element random_element(Rng& rng, const std::string& choices) {
    // choices is a concatenation of symbols, e.g. "CNO" or "CCl"; scan greedily.
    std::vector<Element> pool;
    for (size_t i = 0; i < choices.size();) {
        if (i + 1 < choices.size()) {
            auto two = element_from_symbol(choices.substr(i, 2));
            if (two) {
                pool.push_back(*two);
                i += 2;
                continue;
            }
        }
        auto one = element_from_symbol(choices.substr(i, 1));
        if (!one) throw ConfigError("bad element list '" + choices + "'");
        pool.push_back(*one);
        ++i;
    }
    return pool[rng.uniform_int(static_cast<int>(pool.size()))];
}

bool placement_ok(const std::vector<Vec3>& placed, const Vec3& cand, int bonded_to,
                  const ToyConfig& cfg) {
    if (cand.norm() > cfg.radius) return false;
    for (int i = 0; i < static_cast<int>(placed.size()); ++i) {
        double d = distance(placed[i], cand);
        if (i == bonded_to) {
            if (d < cfg.min_dist) return false;
        } else {
            if (d < cfg.clearance) return false;
        }
    }
    return true;
}

// Open chain: self-avoiding walk with fixed step length.
bool gen_chain(Rng& rng, int n, const ToyConfig& cfg, std::vector<Vec3>& out) {
    out.assign(1, Vec3{0, 0, 0});
    for (int i = 1; i < n; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            Vec3 cand = out.back() + random_unit(rng) * cfg.step;
            if (placement_ok(out, cand, i - 1, cfg)) {
                out.push_back(cand);
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return true;
}

// Closed ring: regular polygon with mild jitter, randomly oriented.
bool gen_ring(Rng& rng, int n, const ToyConfig& cfg, std::vector<Vec3>& out) {
    constexpr double kPi = 3.14159265358979323846264338328;
    double ring_radius = cfg.step / (2.0 * std::sin(kPi / n));
    if (ring_radius > cfg.radius) return false;
    out.clear();
    for (int i = 0; i < n; ++i) {
        double a = 2.0 * kPi * i / n;
        double jitter = rng.uniform(-0.03, 0.03);
        out.push_back({(ring_radius + jitter) * std::cos(a), (ring_radius + jitter) * std::sin(a),
                       rng.uniform(-0.03, 0.03)});
    }
    RigidTransform t = random_rigid_transform(rng, 0.0);
    for (auto& p : out) p = t.rotation.apply(p);
    return true;
}

// Branched tree: grow off random non-tip atoms until some node reaches degree 3.
bool gen_branched(Rng& rng, int n, const ToyConfig& cfg, std::vector<Vec3>& out) {
    out.assign(1, Vec3{0, 0, 0});
    std::vector<int> degree(1, 0);
    std::vector<int> parent(1, -1);
    for (int i = 1; i < n; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 96 && !placed; ++attempt) {
            int anchor = rng.uniform_int(static_cast<int>(out.size()));
            Vec3 cand = out[anchor] + random_unit(rng) * cfg.step;
            if (placement_ok(out, cand, anchor, cfg)) {
                out.push_back(cand);
                degree.push_back(1);
                parent.push_back(anchor);
                ++degree[anchor];
                placed = true;
            }
        }
        if (!placed) return false;
    }
    return *std::max_element(degree.begin(), degree.end()) >= 3;
}

// Compact target scaffold; only C/O/N/S since target grids carry 4 channels.
std::vector<Vec3> gen_scaffold(Rng& rng, int n, const ToyConfig& cfg) {
    std::vector<Vec3> out(1, Vec3{0, 0, 0});
    while (static_cast<int>(out.size()) < n) {
        int anchor = rng.uniform_int(static_cast<int>(out.size()));
        Vec3 cand = out[anchor] + random_unit(rng) * cfg.step;
        bool ok = cand.norm() <= 3.5;
        for (int i = 0; i < static_cast<int>(out.size()) && ok; ++i)
            if (distance(out[i], cand) < cfg.min_dist) ok = false;
        if (ok) out.push_back(cand);
    }
    return out;
}

double min_cross_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : a)
        for (const auto& q : b) best = std::min(best, distance(p, q));
    return best;
}

}  // namespace

Complex gen_toy_complex(uint64_t seed, const ToyConfig& cfg) {
    if (cfg.modality < 0 || cfg.modality >= cfg.modality_count)
        throw ConfigError("toy modality " + std::to_string(cfg.modality) +
                          " out of range (modality_count=" + std::to_string(cfg.modality_count) + ")");
    if (cfg.min_atoms < 1 || cfg.max_atoms < cfg.min_atoms)
        throw ConfigError("bad toy atom count range");

    Rng rng = Rng::derive(seed, 0xb17d, static_cast<uint64_t>(cfg.modality));
    int n = cfg.min_atoms + rng.uniform_int(cfg.max_atoms - cfg.min_atoms + 1);

    std::vector<Vec3> pos;
    bool ok = false;
    for (int restart = 0; restart < 200 && !ok; ++restart) {
        switch (cfg.modality) {
            case 0: ok = gen_chain(rng, n, cfg, pos); break;
            case 1: ok = gen_ring(rng, n, cfg, pos); break;
            default: ok = gen_branched(rng, n, cfg, pos); break;
        }
    }
    if (!ok)
        throw ConfigError("toy config infeasible: radius " + std::to_string(cfg.radius) +
                          " too small for " + std::to_string(n) + " atoms");

    Complex cx;
    cx.modality = cfg.modality;
    for (const auto& p : pos) cx.binder.atoms.push_back({random_element(rng, cfg.elements), p});

    // Center the binder on its bounding box; world frame is the binder frame.
    Vec3 shift = cx.binder.bbox_center();
    for (auto& a : cx.binder.atoms) a.position -= shift;

    // Target scaffold placed so the surface gap lies in [gap_min, gap_max].
    int tn = cfg.target_min_atoms + rng.uniform_int(cfg.target_max_atoms - cfg.target_min_atoms + 1);
    auto scaffold = gen_scaffold(rng, tn, cfg);
    // Aim slightly inside the gap band so the 0.05 convergence slack stays in range.
    double gap = rng.uniform(cfg.target_gap_min + 0.1, cfg.target_gap_max - 0.1);
    Vec3 dir = random_unit(rng);

    std::vector<Vec3> binder_pos;
    for (const auto& a : cx.binder.atoms) binder_pos.push_back(a.position);
    double offset = cfg.radius + 3.5 + gap;
    std::vector<Vec3> placed = scaffold;
    for (int iter = 0; iter < 32; ++iter) {
        for (size_t i = 0; i < scaffold.size(); ++i) placed[i] = scaffold[i] + dir * offset;
        double d = min_cross_distance(binder_pos, placed);
        if (std::abs(d - gap) < 0.05) break;
        offset -= (d - gap);
    }
    const std::string target_elements = "CONS";
    for (const auto& p : placed) cx.target.atoms.push_back({random_element(rng, target_elements), p});
    return cx;
}

// --- neighbor-graph helpers -----------------------------------------------------

std::vector<std::pair<int, int>> neighbor_graph(const Molecule& m, double threshold) {
    std::vector<std::pair<int, int>> edges;
    const int n = m.size();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (distance(m.atoms[i].position, m.atoms[j].position) <= threshold)
                edges.emplace_back(i, j);
    return edges;
}

namespace {
struct GraphShape {
    std::vector<int> degree;
    bool connected = false;
    int edge_count = 0;
};

GraphShape graph_shape(const Molecule& m, double threshold) {
    GraphShape g;
    const int n = m.size();
    g.degree.assign(n, 0);
    auto edges = neighbor_graph(m, threshold);
    g.edge_count = static_cast<int>(edges.size());
    std::vector<std::vector<int>> adj(n);
    for (auto [i, j] : edges) {
        ++g.degree[i];
        ++g.degree[j];
        adj[i].push_back(j);
        adj[j].push_back(i);
    }
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int w : adj[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++count;
                stack.push_back(w);
            }
    }
    g.connected = (count == n);
    return g;
}
}  // namespace

bool is_single_cycle(const Molecule& m, double threshold) {
    if (m.size() < 3) return false;
    auto g = graph_shape(m, threshold);
    if (!g.connected || g.edge_count != m.size()) return false;
    return std::all_of(g.degree.begin(), g.degree.end(), [](int d) { return d == 2; });
}

bool is_single_chain(const Molecule& m, double threshold) {
    if (m.size() < 2) return false;
    auto g = graph_shape(m, threshold);
    if (!g.connected || g.edge_count != m.size() - 1) return false;
    int tips = 0;
    for (int d : g.degree) {
        if (d == 1) ++tips;
        else if (d != 2) return false;
    }
    return tips == 2;
}

}  // namespace fieldgen
