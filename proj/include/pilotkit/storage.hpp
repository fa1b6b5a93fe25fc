#pragma once

// Storage adaptors: space reservation and item put/get/list/remove on one
// storage tier. Accounting granularity is 1 MB per item (rounded up).

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pilotkit/core.hpp"

namespace pilotkit {

enum class StorageTier { Memory, LocalDisk, SharedDisk };

std::string_view to_string(StorageTier tier);

using Bytes = std::shared_ptr<const std::string>;

inline Bytes make_bytes(std::string data) {
  return std::make_shared<const std::string>(std::move(data));
}

inline constexpr std::int64_t kMiB = 1024 * 1024;

// MB charged for an item of `size_bytes` bytes.
inline std::int64_t charged_mb(std::int64_t size_bytes) {
  return (size_bytes + kMiB - 1) / kMiB;
}

struct SpaceInfo {
  std::string id;
  StorageTier tier = StorageTier::Memory;
  std::int64_t space_mb = 0;
  std::int64_t used_mb = 0;
  AffinityLabels labels;
};

struct StoredItem {
  std::string logical_name;
  std::int64_t size_bytes = 0;
};

class StorageAdaptor {
 public:
  StorageAdaptor(StorageTier tier, std::int64_t capacity_mb);
  virtual ~StorageAdaptor() = default;

  StorageAdaptor(const StorageAdaptor&) = delete;
  StorageAdaptor& operator=(const StorageAdaptor&) = delete;

  StorageTier tier() const { return tier_; }
  virtual BackendKind kind() const = 0;
  std::int64_t capacity_mb() const { return capacity_mb_; }
  std::int64_t reserved_mb() const;

  // Throws InsufficientSpace when the tier cannot hold the reservation.
  std::string create_space(const PilotDataDescription& description);
  void destroy_space(const std::string& space_id);
  bool has_space(const std::string& space_id) const;
  SpaceInfo space_info(const std::string& space_id) const;

  // Overwrites an existing item. Throws SpaceExhausted when the space's
  // reservation would be exceeded.
  void put(const std::string& space_id, const std::string& logical_name,
           Bytes data);
  void put(const std::string& space_id, const std::string& logical_name,
           std::string_view data) {
    put(space_id, logical_name, make_bytes(std::string(data)));
  }
  // Throws ItemNotFound / UnknownSpace.
  Bytes get(const std::string& space_id, const std::string& logical_name) const;
  bool contains(const std::string& space_id,
                const std::string& logical_name) const;
  std::vector<StoredItem> list(const std::string& space_id) const;
  void remove(const std::string& space_id, const std::string& logical_name);
  std::int64_t free_mb(const std::string& space_id) const;

 protected:
  virtual void on_create(const std::string& space_id) = 0;
  virtual void on_destroy(const std::string& space_id) = 0;
  virtual void on_put(const std::string& space_id,
                      const std::string& logical_name, Bytes data) = 0;
  virtual Bytes on_get(const std::string& space_id,
                       const std::string& logical_name) const = 0;
  virtual void on_remove(const std::string& space_id,
                         const std::string& logical_name) = 0;

 private:
  struct Space {
    SpaceInfo info;
    std::map<std::string, std::int64_t> items;  // name -> size_bytes
    std::set<std::string> writing;
  };

  std::shared_ptr<Space> space_locked(const std::string& space_id) const;

  StorageTier tier_;
  std::int64_t capacity_mb_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, std::shared_ptr<Space>> spaces_;
};

// In-process tier. Contents vanish with the space.
class MemoryStorage final : public StorageAdaptor {
 public:
  explicit MemoryStorage(std::int64_t capacity_mb);
  BackendKind kind() const override { return BackendKind::Mem; }

 protected:
  void on_create(const std::string& space_id) override;
  void on_destroy(const std::string& space_id) override;
  void on_put(const std::string& space_id, const std::string& logical_name,
              Bytes data) override;
  Bytes on_get(const std::string& space_id,
               const std::string& logical_name) const override;
  void on_remove(const std::string& space_id,
                 const std::string& logical_name) override;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::map<std::string, Bytes>> data_;
};

// Directory tier: <root>/<space_id>/<logical_name>. Writes go through a
// temporary file and a rename so readers never see partial items.
class FileStorage final : public StorageAdaptor {
 public:
  FileStorage(std::filesystem::path root, std::int64_t capacity_mb,
              StorageTier tier = StorageTier::LocalDisk);
  BackendKind kind() const override { return BackendKind::File; }

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_of(const std::string& space_id,
                                const std::string& logical_name) const;

 protected:
  void on_create(const std::string& space_id) override;
  void on_destroy(const std::string& space_id) override;
  void on_put(const std::string& space_id, const std::string& logical_name,
              Bytes data) override;
  Bytes on_get(const std::string& space_id,
               const std::string& logical_name) const override;
  void on_remove(const std::string& space_id,
                 const std::string& logical_name) override;

 private:
  std::filesystem::path root_;
};

// Whole-file helpers shared by storage, staging and the agents.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view data);

}  // namespace pilotkit
