#include "glsasm/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/crc.hpp>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "glsasm/error.hpp"

namespace glsasm {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::string checksum(const std::string& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return fmt::format("{:08x}", crc.checksum());
}

// ---------------------------------------------------------------- PGM

namespace {

class PgmReader {
public:
  explicit PgmReader(const std::string& bytes) : bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::FormatError, what + " at byte offset " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int read_int() {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail("expected an integer");
    int value = 0;
    const auto [ptr, ec] = std::from_chars(bytes_.data() + start, bytes_.data() + pos_, value);
    if (ec != std::errc()) fail("integer out of range");
    return value;
  }

  std::size_t pos_ = 0;
  const std::string& bytes_;
};

}  // namespace

Image decode_pgm(const std::string& bytes) {
  PgmReader r(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') r.fail("missing P5 magic");
  r.pos_ = 2;
  const int width = r.read_int();
  const int height = r.read_int();
  const int maxval = r.read_int();
  if (width <= 0 || height <= 0) r.fail("non-positive image size");
  if (maxval <= 0 || maxval > 255) r.fail("only 8-bit graymaps are supported");
  if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) r.fail("missing header terminator");
  ++r.pos_;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - r.pos_ < count) {
    r.pos_ = bytes.size();
    r.fail("truncated pixel data (expected " + std::to_string(count) + " bytes)");
  }
  Image img(width, height);
  for (std::size_t i = 0; i < count; ++i) {
    img.pixels[i] = static_cast<unsigned char>(bytes[r.pos_ + i]) / 255.0;
  }
  return img;
}

std::string encode_pgm(const Image& img) {
  std::string out = fmt::format("P5\n{} {}\n255\n", img.width, img.height);
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

Image load_image(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::FormatError) throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
    throw;
  }
}

void save_image(const std::filesystem::path& path, const Image& img) { write_file(path, encode_pgm(img)); }

// ---------------------------------------------------------------- landmarks

LandmarkVector parse_landmarks(const std::string& text) {
  std::vector<Complex> points;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::vector<double> values;
    std::size_t pos = 0;
    while (true) {
      while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + end, v);
      if (ec != std::errc() || ptr != line.data() + end || !std::isfinite(v)) {
        throw Error(ErrorKind::FormatError, "non-numeric landmark value on line " + std::to_string(line_no));
      }
      values.push_back(v);
      pos = end;
    }
    if (values.empty()) continue;
    if (values.size() != 2) {
      throw Error(ErrorKind::FormatError, "expected 2 columns on line " + std::to_string(line_no) + ", found " +
                                              std::to_string(values.size()));
    }
    points.emplace_back(values[0], values[1]);
  }
  if (points.empty()) throw Error(ErrorKind::FormatError, "landmark file is empty");
  LandmarkVector k(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) k[static_cast<Eigen::Index>(i)] = points[i];
  return k;
}

std::string format_landmarks(const LandmarkVector& k) {
  std::string out;
  for (Eigen::Index i = 0; i < k.size(); ++i) out += fmt::format("{:.17g} {:.17g}\n", k[i].real(), k[i].imag());
  return out;
}

LandmarkVector load_landmarks(const std::filesystem::path& path) {
  try {
    return parse_landmarks(read_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::FormatError) throw Error(ErrorKind::FormatError, path.string() + ": " + e.what());
    throw;
  }
}

void save_landmarks(const std::filesystem::path& path, const LandmarkVector& k) {
  write_file(path, format_landmarks(k));
}

// ---------------------------------------------------------------- model bundle

ResidualCovariance Calibration::covariance(bool diagonal) const {
  const double gamma = diagonal == diagonal_only ? shrinkage : default_covariance_shrinkage(diagonal);
  return regularize_covariance(r_hat, diagonal, gamma, record_count, centered);
}

namespace {

json encode_matrix(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd decode_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw Error(ErrorKind::FormatError, "matrix payload does not match its declared shape");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data[static_cast<std::size_t>(i * cols + k)];
  }
  return m;
}

json encode_vector(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd decode_vector(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

std::string encode_model(const ModelBundle& bundle) {
  json j;
  j["format"] = "glsasm-model";
  j["version"] = kModelFormatVersion;
  j["provenance"] = bundle.provenance;
  j["pdm"] = {{"mean", encode_vector(bundle.pdm.mean)},
              {"modes", encode_matrix(bundle.pdm.modes)},
              {"eigenvalues", encode_vector(bundle.pdm.eigenvalues)},
              {"xi", bundle.pdm.xi},
              {"variance_fraction", bundle.pdm.variance_fraction},
              {"retained_fraction", bundle.pdm.retained_fraction}};
  const auto& pc = bundle.profiles.config;
  json profiles = {{"profile_len", pc.profile_len},
                   {"search_half_width", pc.search_half_width},
                   {"shrinkage", pc.shrinkage},
                   {"closed", pc.closed},
                   {"training_count", bundle.profiles.training_count},
                   {"rank_deficient", bundle.profiles.rank_deficient}};
  json means = json::array();
  json covs = json::array();
  for (std::size_t n = 0; n < bundle.profiles.means.size(); ++n) {
    means.push_back(encode_vector(bundle.profiles.means[n]));
    covs.push_back(encode_matrix(bundle.profiles.covariances[n]));
  }
  profiles["means"] = means;
  profiles["covariances"] = covs;
  j["profiles"] = profiles;
  const auto& g = bundle.gate;
  j["gate"] = {{"enabled", g.enabled},   {"alpha", g.alpha},
               {"dof", g.dof},           {"critical_value", g.critical_value},
               {"min_valid_landmarks", g.min_valid_landmarks}, {"fallback", g.fallback}};
  if (bundle.calibration) {
    const auto& c = *bundle.calibration;
    j["calibration"] = {{"r_hat_re", encode_matrix(c.r_hat.real())},
                        {"r_hat_im", encode_matrix(c.r_hat.imag())},
                        {"record_count", c.record_count},
                        {"centered", c.centered},
                        {"diagonal_only", c.diagonal_only},
                        {"shrinkage", c.shrinkage}};
  }
  return j.dump(1) + "\n";
}

ModelBundle decode_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::FormatError, std::string("model is not valid JSON: ") + e.what());
  }
  ModelBundle bundle;
  try {
    if (j.at("format").get<std::string>() != "glsasm-model") throw Error(ErrorKind::FormatError, "not a glsasm model");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw Error(ErrorKind::VersionMismatch, "model format version " + std::to_string(version) + " (supported: " +
                                                  std::to_string(kModelFormatVersion) + ")");
    }
    if (j.contains("provenance")) bundle.provenance = j.at("provenance").get<Provenance>();

    const json& p = j.at("pdm");
    bundle.pdm.mean = decode_vector(p.at("mean"));
    bundle.pdm.modes = decode_matrix(p.at("modes"));
    bundle.pdm.eigenvalues = decode_vector(p.at("eigenvalues"));
    bundle.pdm.xi = p.at("xi").get<double>();
    bundle.pdm.variance_fraction = p.at("variance_fraction").get<double>();
    bundle.pdm.retained_fraction = p.at("retained_fraction").get<double>();

    const json& pr = j.at("profiles");
    auto& pm = bundle.profiles;
    pm.config.profile_len = pr.at("profile_len").get<int>();
    pm.config.search_half_width = pr.at("search_half_width").get<int>();
    pm.config.shrinkage = pr.at("shrinkage").get<double>();
    pm.config.closed = pr.at("closed").get<bool>();
    pm.training_count = pr.at("training_count").get<int>();
    pm.rank_deficient = pr.at("rank_deficient").get<bool>();
    for (const auto& m : pr.at("means")) pm.means.push_back(decode_vector(m));
    for (const auto& c : pr.at("covariances")) pm.covariances.push_back(decode_matrix(c));

    const json& g = j.at("gate");
    bundle.gate.enabled = g.at("enabled").get<bool>();
    bundle.gate.alpha = g.at("alpha").get<double>();
    bundle.gate.dof = g.at("dof").get<int>();
    bundle.gate.critical_value = g.at("critical_value").get<double>();
    bundle.gate.min_valid_landmarks = g.at("min_valid_landmarks").get<int>();
    bundle.gate.fallback = g.at("fallback").get<bool>();

    if (j.contains("calibration")) {
      const json& c = j.at("calibration");
      Calibration cal;
      const Eigen::MatrixXd re = decode_matrix(c.at("r_hat_re"));
      const Eigen::MatrixXd im = decode_matrix(c.at("r_hat_im"));
      if (re.rows() != im.rows() || re.cols() != im.cols()) throw Error(ErrorKind::FormatError, "R_hat parts differ in shape");
      cal.r_hat = re.cast<Complex>() + Complex(0.0, 1.0) * im.cast<Complex>();
      cal.record_count = c.at("record_count").get<int>();
      cal.centered = c.at("centered").get<bool>();
      cal.diagonal_only = c.at("diagonal_only").get<bool>();
      cal.shrinkage = c.at("shrinkage").get<double>();
      bundle.calibration = std::move(cal);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("malformed model: ") + e.what());
  }

  // Invariants.
  bundle.pdm.validate(1e-8);
  const Eigen::Index n = bundle.pdm.n_landmarks();
  auto& pm = bundle.profiles;
  pm.config.validate();
  if (static_cast<Eigen::Index>(pm.means.size()) != n || pm.covariances.size() != pm.means.size()) {
    throw Error(ErrorKind::InvariantViolation, "profile model landmark count differs from the shape model");
  }
  for (std::size_t i = 0; i < pm.means.size(); ++i) {
    const Eigen::Index dim = pm.config.effective_len();
    if (pm.means[i].size() != dim || pm.covariances[i].rows() != dim || pm.covariances[i].cols() != dim) {
      throw Error(ErrorKind::InvariantViolation, "profile statistics have the wrong dimension");
    }
  }
  pm.finalize();
  bundle.gate.validate();
  if (bundle.calibration) {
    const auto& r = bundle.calibration->r_hat;
    if (r.rows() != n || r.cols() != n) throw Error(ErrorKind::InvariantViolation, "R_hat size differs from landmark count");
    const double scale = std::max(1e-300, r.cwiseAbs().maxCoeff());
    if ((r - r.adjoint()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw Error(ErrorKind::InvariantViolation, "R_hat is not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(r);
    if (eig.eigenvalues().minCoeff() < -1e-9 * scale) throw Error(ErrorKind::InvariantViolation, "R_hat is not PSD");
    const double s = bundle.calibration->shrinkage;
    if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorKind::InvariantViolation, "calibration shrinkage outside [0, 1]");
  }
  return bundle;
}

void save_model(const std::filesystem::path& path, const ModelBundle& bundle) { write_file(path, encode_model(bundle)); }

ModelBundle load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

// ---------------------------------------------------------------- manifest

namespace {

constexpr std::string_view kManifestMagic = "# glsasm-manifest 1";

std::string format_rects(const std::vector<Rect>& rects) {
  if (rects.empty()) return "-";
  std::string out;
  for (const auto& r : rects) {
    if (!out.empty()) out += ';';
    out += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}", r.x0, r.y0, r.x1, r.y1);
  }
  return out;
}

std::vector<Rect> parse_rects(const std::string& text) {
  std::vector<Rect> rects;
  if (text == "-") return rects;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    Rect r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream is(item);
    if (!(is >> r.x0 >> c1 >> r.y0 >> c2 >> r.x1 >> c3 >> r.y1) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw Error(ErrorKind::FormatError, "bad occlusion rectangle '" + item + "'");
    }
    rects.push_back(r);
  }
  return rects;
}

std::string entry_row(const DatasetEntry& e) {
  return fmt::format("{}\t{}\t{}\t{}\t{}", e.id, e.image_path, e.landmark_path, e.checksum, format_rects(e.occlusions));
}

std::string format_int_list(const std::vector<int>& ids) {
  if (ids.empty()) return "-";
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ',';
    out += std::to_string(i);
  }
  return out;
}

}  // namespace

std::string Dataset::manifest_checksum() const {
  std::string rows;
  for (const auto& e : entries) rows += entry_row(e) + "\n";
  return checksum(rows);
}

std::string encode_manifest(const Dataset& dataset) {
  std::string out(kManifestMagic);
  out += "\n";
  out += fmt::format("# n_landmarks {}\n# closed {}\n# occluded_landmarks {}\n", dataset.n_landmarks,
                     dataset.closed ? 1 : 0, format_int_list(dataset.occluded_landmarks));
  for (const auto& [k, v] : dataset.provenance) out += fmt::format("# config {}={}\n", k, v);
  out += "id\timage\tlandmarks\tchecksum\tocclusions\n";
  for (const auto& e : dataset.entries) out += entry_row(e) + "\n";
  out += fmt::format("# checksum {}\n", dataset.manifest_checksum());
  return out;
}

Dataset decode_manifest(const std::string& text, const std::filesystem::path& root) {
  Dataset ds;
  ds.root = root;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kManifestMagic, 0) != 0) {
    throw Error(ErrorKind::FormatError, "not a glsasm manifest");
  }
  std::string stored_checksum;
  bool header_seen = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      std::string rest;
      std::getline(ls >> std::ws, rest);
      if (key == "n_landmarks") {
        ds.n_landmarks = std::stoi(rest);
      } else if (key == "closed") {
        ds.closed = rest == "1";
      } else if (key == "occluded_landmarks") {
        if (rest != "-") {
          std::istringstream ids(rest);
          std::string id;
          while (std::getline(ids, id, ',')) ds.occluded_landmarks.push_back(std::stoi(id));
        }
      } else if (key == "config") {
        const auto eq = rest.find('=');
        if (eq != std::string::npos) ds.provenance[rest.substr(0, eq)] = rest.substr(eq + 1);
      } else if (key == "checksum") {
        stored_checksum = rest;
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '\t')) cols.push_back(col);
    if (cols.size() != 5) throw Error(ErrorKind::FormatError, "manifest line " + std::to_string(line_no) + " needs 5 columns");
    DatasetEntry e;
    try {
      e.id = std::stoi(cols[0]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::FormatError, "bad id on manifest line " + std::to_string(line_no));
    }
    e.image_path = cols[1];
    e.landmark_path = cols[2];
    e.checksum = cols[3];
    e.occlusions = parse_rects(cols[4]);
    ds.entries.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    for (std::size_t k = i + 1; k < ds.entries.size(); ++k) {
      if (ds.entries[i].id == ds.entries[k].id) throw Error(ErrorKind::InvariantViolation, "duplicate dataset id");
    }
  }
  if (stored_checksum.empty() || stored_checksum != ds.manifest_checksum()) {
    throw Error(ErrorKind::InvariantViolation, "manifest checksum mismatch");
  }
  return ds;
}

void save_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  write_file(path, encode_manifest(dataset));
}

Dataset load_manifest(const std::filesystem::path& path) {
  return decode_manifest(read_file(path), path.parent_path());
}

std::vector<LabeledImage> load_samples(const Dataset& dataset) {
  std::vector<LabeledImage> samples;
  samples.reserve(dataset.entries.size());
  for (const auto& e : dataset.entries) {
    const std::string image_bytes = read_file(dataset.root / e.image_path);
    const std::string landmark_bytes = read_file(dataset.root / e.landmark_path);
    if (checksum(image_bytes + landmark_bytes) != e.checksum) {
      throw Error(ErrorKind::InvariantViolation, "checksum mismatch for dataset entry " + std::to_string(e.id));
    }
    LabeledImage s;
    s.id = e.id;
    s.image = decode_pgm(image_bytes);
    s.landmarks = parse_landmarks(landmark_bytes);
    s.occlusions = e.occlusions;
    if (dataset.n_landmarks > 0 && s.landmarks.size() != dataset.n_landmarks) {
      throw Error(ErrorKind::InvariantViolation, "entry " + std::to_string(e.id) + " has the wrong landmark count");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace glsasm
