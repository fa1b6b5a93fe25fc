#include "pilotkit/storage.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <system_error>

namespace pilotkit {

namespace fs = std::filesystem;

std::string_view to_string(StorageTier tier) {
  switch (tier) {
    case StorageTier::Memory: return "MEMORY";
    case StorageTier::LocalDisk: return "LOCAL_DISK";
    case StorageTier::SharedDisk: return "SHARED_DISK";
  }
  return "?";
}

namespace {

std::string next_space_id() {
  static std::atomic<std::uint64_t> counter{1};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "space-%04llu",
                static_cast<unsigned long long>(counter++));
  return buf;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::string data(size, '\0');
  if (size > 0 && !in.read(data.data(), static_cast<std::streamsize>(size))) {
    throw Error(ErrorCode::Io, "short read on " + path.string());
  }
  return data;
}

void write_file(const fs::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::Io, "short write on " + path.string());
}

StorageAdaptor::StorageAdaptor(StorageTier tier, std::int64_t capacity_mb)
    : tier_(tier), capacity_mb_(capacity_mb) {}

std::int64_t StorageAdaptor::reserved_mb() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::int64_t total = 0;
  for (const auto& [id, s] : spaces_) total += s->info.space_mb;
  return total;
}

std::shared_ptr<StorageAdaptor::Space> StorageAdaptor::space_locked(
    const std::string& space_id) const {
  auto it = spaces_.find(space_id);
  if (it == spaces_.end()) {
    throw Error(ErrorCode::UnknownSpace, "no space '" + space_id + "'");
  }
  return it->second;
}

std::string StorageAdaptor::create_space(const PilotDataDescription& description) {
  std::string id;
  {
    std::lock_guard<std::mutex> lock(mu_);
    std::int64_t reserved = 0;
    for (const auto& [sid, s] : spaces_) reserved += s->info.space_mb;
    if (reserved + description.space_mb > capacity_mb_) {
      throw Error(ErrorCode::InsufficientSpace,
                  std::to_string(description.space_mb) + " MB requested, " +
                      std::to_string(capacity_mb_ - reserved) + " MB free on " +
                      std::string(to_string(tier_)) + " tier");
    }
    id = next_space_id();
    auto space = std::make_shared<Space>();
    space->info = SpaceInfo{id, tier_, description.space_mb, 0,
                            description.affinity};
    spaces_.emplace(id, std::move(space));
  }
  try {
    on_create(id);
  } catch (...) {
    std::lock_guard<std::mutex> lock(mu_);
    spaces_.erase(id);
    throw;
  }
  return id;
}

void StorageAdaptor::destroy_space(const std::string& space_id) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (!spaces_.erase(space_id)) return;
  }
  on_destroy(space_id);
}

bool StorageAdaptor::has_space(const std::string& space_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return spaces_.count(space_id) > 0;
}

SpaceInfo StorageAdaptor::space_info(const std::string& space_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return space_locked(space_id)->info;
}

void StorageAdaptor::put(const std::string& space_id,
                         const std::string& logical_name, Bytes data) {
  const auto size = static_cast<std::int64_t>(data->size());
  std::int64_t delta = 0;
  std::shared_ptr<Space> space;
  {
    std::unique_lock<std::mutex> lock(mu_);
    space = space_locked(space_id);
    cv_.wait(lock, [&] { return !space->writing.count(logical_name); });
    const auto it = space->items.find(logical_name);
    const std::int64_t old_mb = it == space->items.end() ? 0 : charged_mb(it->second);
    delta = charged_mb(size) - old_mb;
    if (space->info.used_mb + delta > space->info.space_mb) {
      throw Error(ErrorCode::SpaceExhausted,
                  "'" + logical_name + "' (" + std::to_string(size) +
                      " bytes) does not fit in " + space_id + " (" +
                      std::to_string(space->info.space_mb - space->info.used_mb) +
                      " MB free)");
    }
    space->info.used_mb += delta;
    space->writing.insert(logical_name);
  }
  try {
    on_put(space_id, logical_name, std::move(data));
  } catch (...) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      space->info.used_mb -= delta;
      space->writing.erase(logical_name);
    }
    cv_.notify_all();
    throw;
  }
  {
    std::lock_guard<std::mutex> lock(mu_);
    space->items[logical_name] = size;
    space->writing.erase(logical_name);
  }
  cv_.notify_all();
}

Bytes StorageAdaptor::get(const std::string& space_id,
                          const std::string& logical_name) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    const auto space = space_locked(space_id);
    if (!space->items.count(logical_name)) {
      throw Error(ErrorCode::ItemNotFound,
                  "no item '" + logical_name + "' in " + space_id);
    }
  }
  return on_get(space_id, logical_name);
}

bool StorageAdaptor::contains(const std::string& space_id,
                              const std::string& logical_name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = spaces_.find(space_id);
  return it != spaces_.end() && it->second->items.count(logical_name) > 0;
}

std::vector<StoredItem> StorageAdaptor::list(const std::string& space_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<StoredItem> out;
  for (const auto& [name, size] : space_locked(space_id)->items) {
    out.push_back(StoredItem{name, size});
  }
  return out;
}

void StorageAdaptor::remove(const std::string& space_id,
                            const std::string& logical_name) {
  {
    std::unique_lock<std::mutex> lock(mu_);
    auto space = space_locked(space_id);
    cv_.wait(lock, [&] { return !space->writing.count(logical_name); });
    auto it = space->items.find(logical_name);
    if (it == space->items.end()) return;
    space->info.used_mb -= charged_mb(it->second);
    space->items.erase(it);
  }
  on_remove(space_id, logical_name);
}

std::int64_t StorageAdaptor::free_mb(const std::string& space_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto space = space_locked(space_id);
  return space->info.space_mb - space->info.used_mb;
}

MemoryStorage::MemoryStorage(std::int64_t capacity_mb)
    : StorageAdaptor(StorageTier::Memory, capacity_mb) {}

void MemoryStorage::on_create(const std::string& space_id) {
  std::lock_guard<std::mutex> lock(mu_);
  data_[space_id];
}

void MemoryStorage::on_destroy(const std::string& space_id) {
  std::lock_guard<std::mutex> lock(mu_);
  data_.erase(space_id);
}

void MemoryStorage::on_put(const std::string& space_id,
                           const std::string& logical_name, Bytes data) {
  std::lock_guard<std::mutex> lock(mu_);
  data_[space_id][logical_name] = std::move(data);
}

Bytes MemoryStorage::on_get(const std::string& space_id,
                            const std::string& logical_name) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto sit = data_.find(space_id);
  if (sit == data_.end()) {
    throw Error(ErrorCode::UnknownSpace, "no space '" + space_id + "'");
  }
  auto it = sit->second.find(logical_name);
  if (it == sit->second.end()) {
    throw Error(ErrorCode::ItemNotFound,
                "no item '" + logical_name + "' in " + space_id);
  }
  return it->second;
}

void MemoryStorage::on_remove(const std::string& space_id,
                              const std::string& logical_name) {
  std::lock_guard<std::mutex> lock(mu_);
  auto sit = data_.find(space_id);
  if (sit != data_.end()) sit->second.erase(logical_name);
}

FileStorage::FileStorage(fs::path root, std::int64_t capacity_mb,
                         StorageTier tier)
    : StorageAdaptor(tier, capacity_mb), root_(std::move(root)) {
  fs::create_directories(root_);
}

fs::path FileStorage::path_of(const std::string& space_id,
                              const std::string& logical_name) const {
  return root_ / space_id / logical_name;
}

void FileStorage::on_create(const std::string& space_id) {
  std::error_code ec;
  fs::create_directories(root_ / space_id, ec);
  if (ec) {
    throw Error(ErrorCode::Io, "cannot create " + (root_ / space_id).string() +
                                   ": " + ec.message());
  }
}

void FileStorage::on_destroy(const std::string& space_id) {
  std::error_code ec;
  fs::remove_all(root_ / space_id, ec);
}

void FileStorage::on_put(const std::string& space_id,
                         const std::string& logical_name, Bytes data) {
  const auto target = path_of(space_id, logical_name);
  auto tmp = target;
  tmp += ".partial";
  write_file(tmp, *data);
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    throw Error(ErrorCode::Io, "cannot commit " + target.string() + ": " +
                                   ec.message());
  }
}

Bytes FileStorage::on_get(const std::string& space_id,
                          const std::string& logical_name) const {
  const auto path = path_of(space_id, logical_name);
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    throw Error(ErrorCode::ItemNotFound,
                "no item '" + logical_name + "' in " + space_id);
  }
  return make_bytes(read_file(path));
}

void FileStorage::on_remove(const std::string& space_id,
                            const std::string& logical_name) {
  std::error_code ec;
  fs::remove(path_of(space_id, logical_name), ec);
}

}  // namespace pilotkit
