#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lmap/error.hpp"
#include "lmap/map.hpp"

namespace lmap {

struct DeviceStoreConfig {
  std::uint64_t keypoint_record_bytes {16};
  std::size_t capacity_keyframes {4096};
};

struct StoredKeyFrame {
  KeyFrameId kf_id {0};
  std::uint64_t payload_bytes {0};
  bool resident {false};
};

struct SmallTransfer {
  std::string stage;
  std::uint64_t bytes {0};
  bool operator==(const SmallTransfer&) const = default;
};

// Host-to-device byte accounting. persistent_bytes_up is what the resident
// store actually moves; naive_bytes_up is what re-sending every neighbor
// keyframe on each access would have moved.
struct TransferLedger {
  std::uint64_t persistent_bytes_up {0};
  std::uint64_t naive_bytes_up {0};
  std::vector<SmallTransfer> per_stage_small_transfers;
  std::uint64_t evictions {0};

  bool operator==(const TransferLedger&) const = default;
};

struct LedgerDelta {
  std::uint64_t persistent {0};
  std::uint64_t naive {0};
};

inline std::uint64_t keyframe_payload_bytes(std::size_t keypoints, std::size_t descriptors,
                                            std::uint64_t keypoint_record_bytes) {
  return keypoints * keypoint_record_bytes + descriptors * BinaryDescriptor::kBytes;
}

// DeviceStore
//
// Models a pre-allocated device-side keyframe store: a keyframe is uploaded
// once when it enters local mapping and stays resident until evicted. No
// device memory is allocated; residency flags plus the ledger carry the model.
class DeviceStore {

  public:

  explicit DeviceStore(DeviceStoreConfig config = {}) : _config{config} {}

  const DeviceStoreConfig& config() const noexcept { return _config; }

  const StoredKeyFrame& upload_keyframe(const KeyFrame& kf) {
    auto it = _entries.find(kf.id);
    require(it == _entries.end() || !it->second.resident, ErrorCode::kInvalidState,
            "keyframe " + std::to_string(kf.id) + " already resident");
    require(it == _entries.end(), ErrorCode::kInvalidState,
            "keyframe " + std::to_string(kf.id) + " was evicted and cannot be re-uploaded");
    require(_resident < _config.capacity_keyframes, ErrorCode::kCapacityExceeded,
            "device keyframe store is full");
    StoredKeyFrame entry{kf.id, keyframe_payload_bytes(kf.keypoints.size(), kf.descriptors.size(),
                                                       _config.keypoint_record_bytes),
                         true};
    _ledger.persistent_bytes_up += entry.payload_bytes;
    ++_resident;
    return _entries.emplace(kf.id, entry).first->second;
  }

  LedgerDelta record_neighbor_access(const std::string& stage, std::span<const KeyFrameId> neighbor_ids) {
    (void)stage;
    LedgerDelta delta;
    for (KeyFrameId id : neighbor_ids) {
      auto it = _entries.find(id);
      require(it != _entries.end() && it->second.resident, ErrorCode::kInvalidState,
              "neighbor keyframe " + std::to_string(id) + " is not resident");
      delta.naive += it->second.payload_bytes;
    }
    _ledger.naive_bytes_up += delta.naive;
    return delta;
  }

  LedgerDelta record_small_transfer(const std::string& stage, std::uint64_t bytes) {
    _ledger.per_stage_small_transfers.push_back({stage, bytes});
    _ledger.persistent_bytes_up += bytes;
    return {bytes, 0};
  }

  StoredKeyFrame evict_keyframe(KeyFrameId id) {
    auto it = _entries.find(id);
    require(it != _entries.end() && it->second.resident, ErrorCode::kInvalidArgument,
            "keyframe " + std::to_string(id) + " is not resident");
    it->second.resident = false;
    --_resident;
    ++_ledger.evictions;
    return it->second;
  }

  bool is_resident(KeyFrameId id) const {
    auto it = _entries.find(id);
    return it != _entries.end() && it->second.resident;
  }

  std::size_t resident_count() const noexcept { return _resident; }

  const StoredKeyFrame& entry(KeyFrameId id) const {
    auto it = _entries.find(id);
    require(it != _entries.end(), ErrorCode::kInvalidArgument, "unknown keyframe " + std::to_string(id));
    return it->second;
  }

  const TransferLedger& ledger() const noexcept { return _ledger; }

  private:

  DeviceStoreConfig _config;
  std::map<KeyFrameId, StoredKeyFrame> _entries;
  std::size_t _resident {0};
  TransferLedger _ledger;
};

}  // namespace lmap
