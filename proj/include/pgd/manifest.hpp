#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgd/pgip.hpp"

namespace pgd {

struct ManifestEntry {
    std::string chip_path; // relative to root, '/' separators
    std::optional<std::vector<BBoxAnnotation>> annotations;
    std::string split; // train | val | test
};

struct Manifest {
    std::string root;
    std::vector<ManifestEntry> entries;
};

namespace detail {

inline std::string generic_relative(const std::filesystem::path& p,
                                    const std::filesystem::path& root) {
    return std::filesystem::relative(p, root).generic_string();
}

inline std::string split_of(const std::string& rel_path) {
    const auto slash = rel_path.find('/');
    if (slash != std::string::npos) {
        const std::string head = rel_path.substr(0, slash);
        if (head == "train" || head == "val" || head == "test")
            return head;
    }
    return "train";
}

} // namespace detail

/// Recursive scan of `root` for PGM/PNG chips with optional "<stem>.json"
/// annotation sidecars. Entries are ordered lexicographically by relative
/// path, so two scans of the same tree agree.
inline Manifest build_manifest(const std::string& root) {
    namespace fs = std::filesystem;
    const fs::path root_path(root);
    std::error_code ec;
    if (!fs::is_directory(root_path, ec))
        throw io_error(root + ": not a readable directory");

    Manifest manifest;
    manifest.root = root;
    for (const auto& item : fs::recursive_directory_iterator(root_path)) {
        if (!item.is_regular_file())
            continue;
        const std::string ext = item.path().extension().string();
        if (ext != ".pgm" && ext != ".png")
            continue;
        ManifestEntry entry;
        entry.chip_path = detail::generic_relative(item.path(), root_path);
        entry.split = detail::split_of(entry.chip_path);

        fs::path sidecar = item.path();
        sidecar.replace_extension(".json");
        if (fs::exists(sidecar)) {
            std::ifstream in(sidecar);
            nlohmann::json j;
            try {
                in >> j;
                entry.annotations = annotations_from_json(j);
            } catch (const std::exception& e) {
                throw io_error(sidecar.string() + ": malformed sidecar: " + e.what());
            }
        }
        manifest.entries.push_back(std::move(entry));
    }
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) {
                  return a.chip_path < b.chip_path;
              });
    return manifest;
}

} // namespace pgd
