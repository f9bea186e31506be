# -*- coding: utf-8 -*-
import os

# full-size corpora only on request
FULL_CORPUS = os.environ.get('AUTHEX_FULL_CORPUS') == '1'
