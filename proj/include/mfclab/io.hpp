#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfclab/pde.hpp"
#include "mfclab/quantize.hpp"
#include "mfclab/regularize.hpp"

namespace mfclab {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// shortest round-trip text, so artifacts are byte-stable
std::string num(double v);

json to_json(const RateTable& t);
std::string rate_table_csv(const RateTable& t, const std::string& param = "param", const std::string& value = "value");

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;
    std::size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }
    const std::vector<double>& column(const std::string& name) const;
};
CsvTable read_csv(const fs::path& path);

// write to a temporary name and rename, so readers never see half a file
void write_file(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// <path> holds raw little-endian doubles, <path>.json the shape
void write_value_tensor(const fs::path& path, const ValueTensor& V, const std::string& provenance = "");
ValueTensor read_value_tensor(const fs::path& path);

// same binary layout; the sidecar carries the lattice manifest
void write_value_field(const fs::path& path, const ValueField& f);
ValueField read_value_field(const fs::path& path);

// collects written files and deletes them unless commit() is called
class ArtifactSet {
   public:
    explicit ArtifactSet(fs::path dir);
    ~ArtifactSet();
    ArtifactSet(const ArtifactSet&) = delete;
    ArtifactSet& operator=(const ArtifactSet&) = delete;

    fs::path path(const std::string& name) const { return dir_ / name; }
    void text(const std::string& name, const std::string& bytes);
    void tensor(const std::string& name, const ValueTensor& V, const std::string& provenance);
    void field(const std::string& name, const ValueField& f);
    const std::vector<std::string>& names() const { return names_; }
    void commit() { committed_ = true; }
    void discard();

   private:
    fs::path dir_;
    std::vector<std::string> names_;
    std::vector<fs::path> files_;
    bool created_dir_ = false;
    bool committed_ = false;
};

}  // namespace mfclab
