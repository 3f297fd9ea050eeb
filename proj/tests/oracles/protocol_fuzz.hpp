#pragma once

// Fuzz harness for the control protocol decoders. Anything other than a
// ProtocolError escaping decode counts as a crash.

#include "stylesplat/server/protocol.hpp"

#include <random>
#include <string>
#include <vector>

namespace oracle {

struct FuzzTally {
    std::size_t inputs = 0;
    std::size_t rejected = 0;   // ProtocolError
    std::size_t accepted = 0;   // decoded to a valid message
    std::size_t crashes = 0;    // any other exception
    std::string first_crash;
};

inline std::vector<std::vector<std::uint8_t>> fuzz_seeds() {
    using namespace stylesplat::server;
    std::vector<ControlMessage> msgs{
        {1, Hello{1, "fuzz"}},
        {2, CameraUpdate{CameraPose{{0.5, -1, 2}, {0.9, 0.1, 0.2, 0.3}, 45}}},
        {3, SetWeights{1, 0}},
        {4, SetStyle{{0x89, 'P', 'N', 'G', 1, 2, 3}}},
        {5, TrainControl{TrainAction::pause}},
        {6, RenderRequest{64, 32, FrameEncoding::raw_rgb8}},
    };
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& m : msgs) out.push_back(encode_message(m).bytes);
    return out;
}

/// `count` inputs split between uniform random bytes and mutated valid
/// messages, each decoded as both a text and a binary message.
inline FuzzTally fuzz_decode(std::size_t count, std::uint32_t seed, std::size_t* random_accepted = nullptr) {
    using namespace stylesplat::server;
    std::mt19937 rng(seed);
    const auto seeds = fuzz_seeds();
    FuzzTally t;
    std::size_t rand_ok = 0;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::uint8_t> in;
        const bool mutated = i % 2 == 1;
        if (!mutated) {
            in.resize(std::uniform_int_distribution<std::size_t>(0, 96)(rng));
            for (auto& b : in) b = std::uint8_t(rng());
        } else {
            in = seeds[rng() % seeds.size()];
            const int edits = 1 + int(rng() % 4);
            for (int e = 0; e < edits; ++e) {
                switch (rng() % 4) {
                    case 0:
                        if (!in.empty()) in[rng() % in.size()] = std::uint8_t(rng());
                        break;
                    case 1:
                        if (!in.empty()) in.resize(rng() % in.size());
                        break;
                    case 2: in.insert(in.begin() + std::ptrdiff_t(in.empty() ? 0 : rng() % in.size()), std::uint8_t(rng())); break;
                    default:
                        if (!in.empty()) in.erase(in.begin() + std::ptrdiff_t(rng() % in.size()));
                }
            }
        }
        ++t.inputs;
        for (bool binary : {false, true}) {
            try {
                (void)decode_message(binary, in);
                ++t.accepted;
                if (!mutated) ++rand_ok;
            } catch (const ProtocolError&) {
                ++t.rejected;
            } catch (const std::exception& e) {
                if (t.crashes++ == 0) t.first_crash = e.what();
            } catch (...) {
                if (t.crashes++ == 0) t.first_crash = "non-standard exception";
            }
        }
    }
    if (random_accepted) *random_accepted = rand_ok;
    return t;
}

}  // namespace oracle
