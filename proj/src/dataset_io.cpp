// SPDX-License-Identifier: Apache-2.0
#include "instapbm/dataset_io.hpp"

#include <fstream>

#include "instapbm/binary_io.hpp"
#include "instapbm/errors.hpp"

namespace instapbm {

namespace {

constexpr std::uint32_t kOutlierCode = 0xffffffffu;

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  for (int y : labels) binary::write_u32(os, y < 0 ? kOutlierCode : static_cast<std::uint32_t>(y));
}

std::vector<int> read_labels(const std::filesystem::path& path, std::size_t n) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  std::vector<int> out(n);
  for (auto& y : out) {
    const std::uint32_t v = binary::read_u32(is);
    y = v == kOutlierCode ? kOutlierLabel : static_cast<int>(v);
  }
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const DomainDataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  std::size_t outliers = 0;
  for (int y : ds.labels) outliers += y < 0 ? 1 : 0;
  nlohmann::json meta = {
      {"format", "instapbm-dataset"},
      {"version", 1},
      {"domain_role", to_string(ds.role)},
      {"K", ds.class_count},
      {"counts", ds.class_counts()},
      {"outliers", outliers},
      {"shape", ds.inputs.shape()},
      {"has_sublabels", ds.sublabels.has_value()},
      {"seed", ds.metadata.contains("spec") ? ds.metadata["spec"].value("seed", 0ull) : ds.metadata.value("seed", 0ull)},
      {"spec", ds.metadata},
  };
  {
    std::ofstream os(dir / "meta.json");
    if (!os) throw ValidationError("cannot write " + (dir / "meta.json").string());
    os << meta.dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "images.f32le", std::ios::binary);
    for (double v : ds.inputs.data()) binary::write_f32(os, static_cast<float>(v));
  }
  write_labels(dir / "labels.u32le", ds.labels);
  if (ds.sublabels) {
    write_labels(dir / "sublabels.u32le", *ds.sublabels);
  } else {
    std::filesystem::remove(dir / "sublabels.u32le");
  }
}

DomainDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "meta.json");
  if (!ms) throw ValidationError("no dataset at " + dir.string() + " (missing meta.json)");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed meta.json in " + dir.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "instapbm-dataset") throw ValidationError(dir.string() + " is not a dataset directory");
  DomainDataset ds;
  const auto shape = meta.at("shape").get<Shape>();
  if (shape.size() < 2) throw ValidationError("dataset shape must have rank 2 or 3");
  std::vector<double> values(element_count(shape));
  {
    std::ifstream is(dir / "images.f32le", std::ios::binary);
    if (!is) throw ValidationError("missing images.f32le in " + dir.string());
    for (auto& v : values) v = static_cast<double>(binary::read_f32(is));
  }
  ds.inputs = Tensor(shape, std::move(values));
  ds.labels = read_labels(dir / "labels.u32le", shape[0]);
  if (meta.value("has_sublabels", false)) ds.sublabels = read_labels(dir / "sublabels.u32le", shape[0]);
  ds.role = role_from_string(meta.at("domain_role").get<std::string>());
  ds.class_count = meta.at("K").get<std::size_t>();
  ds.metadata = meta.at("spec");
  ds.validate();
  return ds;
}

}  // namespace instapbm
