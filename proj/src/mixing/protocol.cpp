#include "cmc/mixing/protocol.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <barrier>
#include <cerrno>
#include <cstring>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "cmc/core/hash.hpp"

namespace cmc {

namespace {

constexpr std::uint32_t kMagic = 0x574D4D43;  // "CMCW"
constexpr std::uint16_t kVersion = 1;

class Writer {
public:
    template <typename T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const std::byte*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::byte*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    std::vector<std::byte>& bytes() { return buf_; }

private:
    std::vector<std::byte> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> b) : b_(b) {}
    template <typename T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    void take(void* out, std::size_t n) {
        if (pos_ + n > b_.size()) throw ProtocolError("truncated worker message");
        std::memcpy(out, b_.data() + pos_, n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::byte> b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> encode(const WorkerMessage& msg) {
    Writer w;
    w.put(kMagic);
    w.put(kVersion);
    w.put(static_cast<std::uint16_t>(msg.kind));
    w.put(static_cast<std::int32_t>(msg.rank));
    w.put(msg.seed.step);
    w.put(msg.seed.global_seed);
    w.put(msg.seed.epoch);
    w.put(static_cast<std::uint32_t>(msg.samples.size()));
    const Shape3 shape = msg.samples.empty() ? Shape3{} : msg.samples[0].volume.shape();
    w.put(static_cast<std::int32_t>(shape.depth));
    w.put(static_cast<std::int32_t>(shape.height));
    w.put(static_cast<std::int32_t>(shape.width));
    std::uint64_t payload = 0;
    if (msg.kind == MessageKind::Failure)
        payload = msg.error.size();
    else
        payload = msg.samples.size() * (2 + std::uint64_t(shape.voxels())) * sizeof(Real);
    w.put(payload);
    if (msg.kind == MessageKind::Failure) {
        w.put_bytes(msg.error.data(), msg.error.size());
    } else {
        for (const auto& s : msg.samples) {
            if (!(s.volume.shape() == shape)) throw ProtocolError("samples of one message must share a shape");
            w.put_bytes(s.label.data(), 2 * sizeof(Real));
            w.put_bytes(s.volume.data(), std::size_t(s.volume.size()) * sizeof(Real));
        }
    }
    const std::uint64_t checksum = fnv1a64(w.bytes());
    w.put(checksum);
    return std::move(w.bytes());
}

WorkerMessage decode(std::span<const std::byte> bytes) {
    if (bytes.size() < sizeof(std::uint64_t)) throw ProtocolError("truncated worker message");
    const auto body = bytes.first(bytes.size() - sizeof(std::uint64_t));
    std::uint64_t checksum;
    std::memcpy(&checksum, bytes.data() + body.size(), sizeof checksum);
    Reader r(body);
    if (r.get<std::uint32_t>() != kMagic) throw ProtocolError("bad worker message magic");
    if (r.get<std::uint16_t>() != kVersion) throw ProtocolError("unsupported worker message version");
    if (fnv1a64(body) != checksum) throw ProtocolError("worker message checksum mismatch");

    WorkerMessage msg;
    msg.kind = static_cast<MessageKind>(r.get<std::uint16_t>());
    msg.rank = r.get<std::int32_t>();
    msg.seed.step = r.get<std::uint64_t>();
    msg.seed.global_seed = r.get<std::uint64_t>();
    msg.seed.epoch = r.get<std::uint64_t>();
    const auto count = r.get<std::uint32_t>();
    Shape3 shape;
    shape.depth = r.get<std::int32_t>();
    shape.height = r.get<std::int32_t>();
    shape.width = r.get<std::int32_t>();
    const auto payload = r.get<std::uint64_t>();
    if (r.pos() + payload != body.size()) throw ProtocolError("worker message payload length mismatch");
    if (msg.kind == MessageKind::Failure) {
        msg.error.resize(payload);
        r.take(msg.error.data(), payload);
        return msg;
    }
    if (payload != count * (2 + std::uint64_t(shape.voxels())) * sizeof(Real))
        throw ProtocolError("worker message payload size does not match its header");
    msg.samples.resize(count);
    for (auto& s : msg.samples) {
        r.take(s.label.data(), 2 * sizeof(Real));
        s.volume = CTVolume(shape);
        r.take(s.volume.data(), std::size_t(s.volume.size()) * sizeof(Real));
    }
    return msg;
}

std::vector<LabeledVolume> concatenate_gathered(std::span<const WorkerBatch> gathered) {
    if (gathered.empty()) throw ProtocolError("no workers");
    std::vector<LabeledVolume> all;
    for (std::size_t r = 0; r < gathered.size(); ++r) {
        const auto& w = gathered[r];
        if (w.rank != int(r)) throw ProtocolError("gathered batches are not in rank order");
        if (w.samples.size() != gathered[0].samples.size())
            throw ProtocolError("unequal local batch sizes: rank " + std::to_string(r) + " has " +
                                std::to_string(w.samples.size()) + ", rank 0 has " +
                                std::to_string(gathered[0].samples.size()));
        if (!(w.seed == gathered[0].seed))
            throw ProtocolError("divergent seed tuple on rank " + std::to_string(r));
        all.insert(all.end(), w.samples.begin(), w.samples.end());
    }
    return all;
}

MixedBatch mix_and_select(std::span<const WorkerBatch> gathered, int rank, Real alpha, MixPolicy policy) {
    const auto all = concatenate_gathered(gathered);
    auto mixed = hybrid_mix(all, gathered[0].seed, alpha, policy);
    const std::size_t local = gathered[0].samples.size();
    const std::size_t begin = std::size_t(rank) * local;
    MixedBatch mine;
    for (std::size_t i = begin; i < begin + local; ++i) {
        mine.raw.push_back(std::move(mixed.raw[i]));
        mine.mixed.push_back(std::move(mixed.mixed[i]));
    }
    return mine;
}

namespace {

WorkerBatch to_batch(WorkerMessage&& m) { return {m.rank, m.seed, std::move(m.samples)}; }

WorkerMessage batch_message(const WorkerBatch& b) {
    return {MessageKind::Batch, b.rank, b.seed, b.samples, {}};
}

WorkerMessage result_message(int rank, const SeedTuple& seed, MixedBatch&& mb) {
    WorkerMessage m{MessageKind::Result, rank, seed, std::move(mb.raw), {}};
    m.samples.insert(m.samples.end(), std::make_move_iterator(mb.mixed.begin()),
                     std::make_move_iterator(mb.mixed.end()));
    return m;
}

MixedBatch from_result(WorkerMessage&& m) {
    if (m.kind == MessageKind::Failure) throw ProtocolError("worker " + std::to_string(m.rank) + ": " + m.error);
    if (m.kind != MessageKind::Result || m.samples.size() % 2 != 0)
        throw ProtocolError("malformed result message from worker " + std::to_string(m.rank));
    MixedBatch out;
    const std::size_t half = m.samples.size() / 2;
    out.raw.assign(std::make_move_iterator(m.samples.begin()), std::make_move_iterator(m.samples.begin() + half));
    out.mixed.assign(std::make_move_iterator(m.samples.begin() + half), std::make_move_iterator(m.samples.end()));
    return out;
}

// Each thread publishes its encoded batch, waits at the barrier, decodes
// every slot in rank order and runs the deterministic mix itself.
std::vector<MixedBatch> run_threads(std::span<const WorkerBatch> workers, Real alpha, MixPolicy policy) {
    const std::size_t n = workers.size();
    std::vector<std::vector<std::byte>> slots(n);
    std::vector<std::optional<MixedBatch>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::barrier sync(static_cast<std::ptrdiff_t>(n));
    std::vector<std::thread> threads;
    for (std::size_t r = 0; r < n; ++r) {
        threads.emplace_back([&, r] {
            try {
                slots[r] = encode(batch_message(workers[r]));
            } catch (...) {
                errors[r] = std::current_exception();
            }
            sync.arrive_and_wait();
            try {
                if (errors[r]) return;
                std::vector<WorkerBatch> gathered;
                for (std::size_t k = 0; k < n; ++k) {
                    if (slots[k].empty()) throw ProtocolError("rank " + std::to_string(k) + " sent nothing");
                    gathered.push_back(to_batch(decode(slots[k])));
                }
                results[r] = mix_and_select(gathered, int(r), alpha, policy);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<MixedBatch> out;
    for (auto& r : results) out.push_back(std::move(*r));
    return out;
}

void write_all(int fd, const std::vector<std::byte>& bytes) {
    const std::uint64_t n = bytes.size();
    const std::byte* parts[2] = {reinterpret_cast<const std::byte*>(&n), bytes.data()};
    const std::size_t sizes[2] = {sizeof n, bytes.size()};
    for (int k = 0; k < 2; ++k) {
        std::size_t done = 0;
        while (done < sizes[k]) {
            const ssize_t w = ::write(fd, parts[k] + done, sizes[k] - done);
            if (w < 0 && errno == EINTR) continue;
            if (w <= 0) throw ProtocolError("pipe write failed: " + std::string(std::strerror(errno)));
            done += std::size_t(w);
        }
    }
}

std::vector<std::byte> read_all(int fd) {
    auto read_exact = [fd](void* out, std::size_t n) {
        std::size_t done = 0;
        while (done < n) {
            const ssize_t r = ::read(fd, static_cast<char*>(out) + done, n - done);
            if (r < 0 && errno == EINTR) continue;
            if (r <= 0) throw ProtocolError("worker pipe closed early");
            done += std::size_t(r);
        }
    };
    std::uint64_t n = 0;
    read_exact(&n, sizeof n);
    std::vector<std::byte> bytes(n);
    read_exact(bytes.data(), n);
    return bytes;
}

// One forked process per worker. The parent relays: it gathers every
// worker's batch message, forwards the gathered set to each worker, and
// collects each worker's result message.
std::vector<MixedBatch> run_processes(std::span<const WorkerBatch> workers, Real alpha, MixPolicy policy) {
    const std::size_t n = workers.size();
    struct Child {
        pid_t pid;
        int up;
        int down;
    };
    std::vector<Child> children;
    auto cleanup = [&] {
        for (auto& c : children) {
            ::close(c.up);
            ::close(c.down);
            int status = 0;
            ::waitpid(c.pid, &status, 0);
        }
        children.clear();
    };

    for (std::size_t r = 0; r < n; ++r) {
        int up[2], down[2];
        if (::pipe(up) != 0 || ::pipe(down) != 0) {
            cleanup();
            throw ProtocolError("pipe() failed");
        }
        const pid_t pid = ::fork();
        if (pid < 0) {
            cleanup();
            throw ProtocolError("fork() failed");
        }
        if (pid == 0) {
            ::close(up[0]);
            ::close(down[1]);
            int code = 0;
            try {
                write_all(up[1], encode(batch_message(workers[r])));
                std::vector<WorkerBatch> gathered;
                for (std::size_t k = 0; k < n; ++k) gathered.push_back(to_batch(decode(read_all(down[0]))));
                try {
                    auto mine = mix_and_select(gathered, int(r), alpha, policy);
                    write_all(up[1], encode(result_message(int(r), workers[r].seed, std::move(mine))));
                } catch (const std::exception& e) {
                    write_all(up[1], encode(WorkerMessage{MessageKind::Failure, int(r), {}, {}, e.what()}));
                }
            } catch (...) {
                code = 1;
            }
            ::_exit(code);
        }
        ::close(up[1]);
        ::close(down[0]);
        children.push_back({pid, up[0], down[1]});
    }

    try {
        std::vector<std::vector<std::byte>> gathered;
        for (auto& c : children) {
            auto bytes = read_all(c.up);
            decode(bytes);  // verify before relaying
            gathered.push_back(std::move(bytes));
        }
        for (auto& c : children)
            for (const auto& g : gathered) write_all(c.down, g);
        std::vector<MixedBatch> out;
        for (auto& c : children) out.push_back(from_result(decode(read_all(c.up))));
        cleanup();
        return out;
    } catch (...) {
        cleanup();
        throw;
    }
}

}  // namespace

std::vector<MixedBatch> gather_dispatch(std::span<const WorkerBatch> workers, Real alpha, MixPolicy policy,
                                        Transport transport) {
    if (workers.empty()) throw ProtocolError("gather_dispatch needs at least one worker");
    // Validate up front so every transport fails the same way.
    concatenate_gathered(workers);
    switch (transport) {
        case Transport::Threads: return run_threads(workers, alpha, policy);
        case Transport::Processes: return run_processes(workers, alpha, policy);
        case Transport::InProcess: break;
    }
    std::vector<MixedBatch> out;
    for (std::size_t r = 0; r < workers.size(); ++r) out.push_back(mix_and_select(workers, int(r), alpha, policy));
    return out;
}

}  // namespace cmc
