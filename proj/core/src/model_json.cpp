#include "nfid/model_json.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "nfid/error.hpp"

namespace nfid::io {

using nlohmann::json;

namespace {

json complex_json(cplx z) { return json{{"re", z.real()}, {"im", z.imag()}}; }

cplx complex_from(const json& j) { return {j.at("re").get<double>(), j.at("im").get<double>()}; }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw InputError(std::string("field ") + name + " has the wrong number of rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError(std::string("field ") + name + " has the wrong number of columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

std::string model_to_json(const normalform::HwNormalForm& model, const Provenance& provenance) {
  model.validate();
  json j;
  j["format"] = "nfid-model/1";
  j["n_ivars"] = model.n_ivars();
  j["A"] = matrix_json(model.A);
  j["B"] = matrix_json(model.B);
  json c = json::array();
  for (Eigen::Index i = 0; i < model.C.size(); ++i) c.push_back(complex_json(model.C[i]));
  j["C"] = c;
  json d = json::array();
  for (int i = 0; i < 3; ++i) d.push_back(complex_json(model.D[i]));
  j["D"] = d;
  j["setpoints"] = {{"P", model.sp.P}, {"Q", model.sp.Q}, {"v", model.sp.v}};
  j["provenance"] = json(provenance);
  return j.dump(2) + "\n";
}

normalform::HwNormalForm model_from_json(const std::string& text, Provenance* provenance,
                                         const std::string& source) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "nfid-model/1") throw InputError("unsupported model format");
    const int n = j.at("n_ivars").get<int>();
    if (n < 0) throw InputError("n_ivars must be >= 0");
    normalform::HwNormalForm m;
    m.A = matrix_from(j.at("A"), n, n, "A");
    m.B = matrix_from(j.at("B"), n, 3, "B");
    const auto& c = j.at("C");
    if (!c.is_array() || static_cast<int>(c.size()) != n) throw InputError("field C must have n_ivars entries");
    m.C.resize(n);
    for (int i = 0; i < n; ++i) m.C[i] = complex_from(c[static_cast<std::size_t>(i)]);
    const auto& d = j.at("D");
    if (!d.is_array() || d.size() != 3) throw InputError("field D must have 3 entries");
    for (int i = 0; i < 3; ++i) m.D[i] = complex_from(d[static_cast<std::size_t>(i)]);
    const auto& sp = j.at("setpoints");
    m.sp = {sp.at("P").get<double>(), sp.at("Q").get<double>(), sp.at("v").get<double>()};
    if (provenance) {
      provenance->clear();
      if (j.contains("provenance")) *provenance = j.at("provenance").get<Provenance>();
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw InputError(source + ": malformed model file: " + e.what());
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << bytes;
  if (!out) throw InputError("write failed: " + path.string());
}

void save_model(const std::filesystem::path& path, const normalform::HwNormalForm& model,
                const Provenance& provenance) {
  write_file(path, model_to_json(model, provenance));
}

normalform::HwNormalForm load_model(const std::filesystem::path& path, Provenance* provenance) {
  return model_from_json(read_file(path), provenance, path.string());
}

}  // namespace nfid::io
