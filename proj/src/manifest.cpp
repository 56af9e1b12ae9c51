#include "pat/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pat/error.hpp"

namespace pat {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) fields.push_back(field);
  return fields;
}

}  // namespace

std::string Manifest::resolve(const std::string& relative) const {
  return (fs::path(directory) / relative).string();
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  Manifest m;
  m.directory = fs::path(path).parent_path().string();
  if (m.directory.empty()) m.directory = ".";
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw DataError(path + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_tabs(line);
    if (f[0] == "class") {
      if (f.size() != 3) fail("class lines need 3 fields");
      std::size_t used = 0;
      std::size_t id = 0;
      try {
        id = std::stoul(f[1], &used);
      } catch (const std::exception&) {
        fail("bad class id '" + f[1] + "'");
      }
      if (used != f[1].size()) fail("bad class id '" + f[1] + "'");
      m.classes.push_back({id, f[2]});
    } else if (f[0] == "sample") {
      if (f.size() != 4 && f.size() != 5) fail("sample lines need 4 or 5 fields");
      SampleEntry s{f[1], f[2], f[3], f.size() == 5 ? f[4] : ""};
      for (const auto* p : {&s.image, &s.label, &s.feature}) {
        if (p->empty()) continue;
        if (!fs::exists(m.resolve(*p))) fail("referenced file '" + *p + "' does not exist");
      }
      m.samples.push_back(std::move(s));
    } else {
      fail("unknown record type '" + f[0] + "'");
    }
  }
  for (std::size_t i = 0; i < m.classes.size(); ++i) {
    if (m.classes[i].id != i) {
      throw DataError(path + ": class ids must be dense from 0 in order; found " +
                      std::to_string(m.classes[i].id) + " at position " + std::to_string(i));
    }
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << "# pat dataset manifest\n";
  for (const auto& c : manifest.classes) out << "class\t" << c.id << '\t' << c.name << '\n';
  for (const auto& s : manifest.samples) {
    out << "sample\t" << s.id << '\t' << s.image << '\t' << s.label;
    if (!s.feature.empty()) out << '\t' << s.feature;
    out << '\n';
  }
}

}  // namespace pat
