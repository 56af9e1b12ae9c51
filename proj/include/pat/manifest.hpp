#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Dataset index: UTF-8 text, tab-separated fields, '#' starts a comment line.
//   class  <id>  <name>
//   sample <id>  <image>  <label>  [<feature>]
// Paths are relative to the manifest's directory.
namespace pat {

struct ClassEntry {
  std::size_t id = 0;
  std::string name;
};

struct SampleEntry {
  std::string id;
  std::string image;
  std::string label;
  std::string feature;  // empty when absent
};

struct Manifest {
  std::string directory;
  std::vector<ClassEntry> classes;
  std::vector<SampleEntry> samples;

  std::string resolve(const std::string& relative) const;
};

// Validates field counts, dense class ids from 0, and that every referenced
// file exists. Throws DataError otherwise.
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

}  // namespace pat
