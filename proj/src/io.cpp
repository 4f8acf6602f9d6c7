#include "mfclab/io.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mfclab {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'V', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, ".vt files are little-endian doubles");

std::string tensor_bytes(std::uint32_t kind, const std::vector<double>& values) {
    std::string out(4 + 4 + 4 + 8, '\0');
    std::uint64_t n = values.size();
    std::memcpy(out.data(), kMagic, 4);
    std::memcpy(out.data() + 4, &kVersion, 4);
    std::memcpy(out.data() + 8, &kind, 4);
    std::memcpy(out.data() + 12, &n, 8);
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    return out;
}

std::vector<double> parse_tensor(const std::string& bytes, std::uint32_t want_kind, const fs::path& p) {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error(p.string() + ": not a .vt file");
    std::uint32_t version, kind;
    std::uint64_t n;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&kind, bytes.data() + 8, 4);
    std::memcpy(&n, bytes.data() + 12, 8);
    if (version != kVersion) throw Error(p.string() + ": unsupported .vt version " + std::to_string(version));
    if (kind != want_kind) throw Error(p.string() + ": wrong tensor kind");
    if (bytes.size() != 20 + n * sizeof(double)) throw Error(p.string() + ": truncated");
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes.data() + 20, n * sizeof(double));
    return v;
}

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
        s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    }
    return out;
}

}  // namespace

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    return fmt::format("{}", v);
}

json to_json(const RateTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) rows.push_back({{"param", r.param}, {"value", r.value}, {"stderr", r.stderr_}});
    return {{"rows", rows}, {"slope", t.slope}, {"intercept", t.intercept}, {"residual", t.residual}};
}

std::string rate_table_csv(const RateTable& t, const std::string& param, const std::string& value) {
    std::string s = param + "," + value + ",stderr\n";
    for (const auto& r : t.rows) s += num(r.param) + "," + num(r.value) + "," + num(r.stderr_) + "\n";
    return s;
}

const std::vector<double>& CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return columns[i];
    throw Error("csv: missing column '" + name + "'");
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(path.string() + ": cannot open");
    CsvTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = cells;
            t.columns.assign(cells.size(), {});
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error(fmt::format("{}:{}: expected {} fields, got {}", path.string(), lineno, t.header.size(),
                                    cells.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(cells[i], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cells[i].size())
                throw Error(fmt::format("{}:{}: '{}' is not a number", path.string(), lineno, cells[i]));
            t.columns[i].push_back(v);
        }
    }
    if (t.header.empty()) throw Error(path.string() + ": empty csv");
    return t;
}

void write_file(const fs::path& path, const std::string& bytes) {
    fs::path tmp = path;
    tmp += ".part";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(path.string() + ": cannot write");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw Error(path.string() + ": write failed");
        }
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_value_tensor(const fs::path& path, const ValueTensor& V, const std::string& provenance) {
    json meta = {{"format", "mfclab.value_tensor"},
                 {"version", kVersion},
                 {"N", V.N},
                 {"resolution", V.resolution},
                 {"dt", V.dt},
                 {"theta", V.theta},
                 {"times", V.times},
                 {"layout", "slice-major, axis 0 fastest"},
                 {"provenance", provenance}};
    write_file(path, tensor_bytes(0, V.values));
    write_file(sidecar(path), meta.dump(2) + "\n");
}

ValueTensor read_value_tensor(const fs::path& path) {
    auto meta = json::parse(read_file(sidecar(path)));
    if (meta.value("format", "") != "mfclab.value_tensor") throw Error(path.string() + ": sidecar is not a value tensor");
    ValueTensor V;
    V.N = meta.at("N");
    V.resolution = meta.at("resolution");
    V.dt = meta.at("dt");
    V.theta = meta.at("theta");
    V.times = meta.at("times").get<std::vector<double>>();
    V.values = parse_tensor(read_file(path), 0, path);
    if (V.values.size() != V.times.size() * V.slice_size()) throw Error(path.string() + ": shape mismatch");
    return V;
}

void write_value_field(const fs::path& path, const ValueField& f) {
    const auto& L = *f.lattice;
    json members = json::array();
    for (const auto& m : L.members) members.push_back(m.masses);
    json fams = json::array();
    for (const auto& fa : L.families) fams.push_back({{"label", fa.label}, {"first", fa.first}, {"count", fa.count}});
    json meta = {{"format", "mfclab.value_field"},
                 {"version", kVersion},
                 {"times", f.times},
                 {"z_resolution", f.z_resolution},
                 {"layout", "time, z, member"},
                 {"provenance", f.provenance},
                 {"projection_error", f.projection_error},
                 {"lattice",
                  {{"cells", L.cells},
                   {"resolution", L.resolution},
                   {"base", L.base},
                   {"families", fams},
                   {"members", members}}}};
    write_file(path, tensor_bytes(1, f.values));
    write_file(sidecar(path), meta.dump() + "\n");
}

ValueField read_value_field(const fs::path& path) {
    auto meta = json::parse(read_file(sidecar(path)));
    if (meta.value("format", "") != "mfclab.value_field") throw Error(path.string() + ": sidecar is not a value field");
    const auto& lj = meta.at("lattice");
    int cells = lj.at("cells");
    std::vector<GridDensity> ms;
    for (const auto& m : lj.at("members")) ms.push_back(make_grid(Domain::torus(1), {cells}, m.get<std::vector<double>>()));
    auto L = std::make_shared<MeasureLattice>(explicit_lattice(ms));
    L->resolution = lj.at("resolution");
    L->base = lj.at("base");
    L->families.clear();
    for (const auto& fa : lj.at("families")) L->families.push_back({fa.at("label"), fa.at("first"), fa.at("count")});
    ValueField f;
    f.lattice = L;
    f.times = meta.at("times").get<std::vector<double>>();
    f.z_resolution = meta.at("z_resolution");
    f.provenance = meta.at("provenance");
    f.projection_error = meta.at("projection_error");
    f.values = parse_tensor(read_file(path), 1, path);
    if (f.values.size() != f.times.size() * f.z_resolution * L->size()) throw Error(path.string() + ": shape mismatch");
    return f;
}

ArtifactSet::ArtifactSet(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::exists(dir_)) {
        fs::create_directories(dir_);
        created_dir_ = true;
    }
}

ArtifactSet::~ArtifactSet() {
    if (!committed_) discard();
}

void ArtifactSet::text(const std::string& name, const std::string& bytes) {
    files_.push_back(path(name));
    write_file(path(name), bytes);
    names_.push_back(name);
}

void ArtifactSet::tensor(const std::string& name, const ValueTensor& V, const std::string& provenance) {
    files_.push_back(path(name));
    files_.push_back(sidecar(path(name)));
    write_value_tensor(path(name), V, provenance);
    names_.push_back(name);
    names_.push_back(name + ".json");
}

void ArtifactSet::field(const std::string& name, const ValueField& f) {
    files_.push_back(path(name));
    files_.push_back(sidecar(path(name)));
    write_value_field(path(name), f);
    names_.push_back(name);
    names_.push_back(name + ".json");
}

void ArtifactSet::discard() {
    std::error_code ec;
    for (const auto& p : files_) {
        fs::remove(p, ec);
        fs::remove(fs::path(p.string() + ".part"), ec);
    }
    files_.clear();
    names_.clear();
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
    committed_ = true;
}

}  // namespace mfclab
