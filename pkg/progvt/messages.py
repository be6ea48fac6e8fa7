# coding: utf-8

# Copyright 2019-2020 The progvt authors

# This file is part of progvt.
#
# progvt is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# any later version.
#
# progvt is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with progvt.  If not, see <https://www.gnu.org/licenses/>.

r"""PyPubSub topics used to report progress between pipeline stages

Topics are created here with an explicit message data specification so
that senders and listeners agree regardless of import order.

"""

import logging

from pubsub import pub

logger = logging.getLogger(__name__)

CORPUS_PROGRESS = "corpus_progress"
TRAINER_PROGRESS = "trainer_progress"
SCORING_PROGRESS = "scoring_progress"


def _corpus_progress(kind, done, total):
    r"""kind: 'positive', 'negative' or 'timeline'"""


def _trainer_progress(step, max_steps, phonetic_loss, disc_loss):
    r"""Sent every TrainConfig.log_every steps"""


def _scoring_progress(done, total):
    r"""Sent while scoring candidates"""


_PROTOTYPES = ((CORPUS_PROGRESS, _corpus_progress),
               (TRAINER_PROGRESS, _trainer_progress),
               (SCORING_PROGRESS, _scoring_progress))


def declare_topics():
    r"""Create the progvt topics (idempotent)"""
    manager = pub.getDefaultTopicMgr()
    for name, prototype in _PROTOTYPES:
        manager.getOrCreateTopic(name, prototype)


def send(topic, **data):
    r"""Publish a progress message on one of the progvt topics"""
    pub.sendMessage(topic, **data)


declare_topics()
