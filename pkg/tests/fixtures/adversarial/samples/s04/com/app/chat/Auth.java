package com.app.chat;

import javax.crypto.KeyAgreement;
import javax.crypto.Mac;

public class Auth {
    public void mac(java.security.Key key) throws Exception {
        Mac m1 = Mac.getInstance("HmacSHA256");
        Mac m2 = Mac.getInstance(key.getAlgorithm());
        KeyAgreement ka = KeyAgreement.getInstance("ECDH", "BC");
        Object o = MyMac.getInstance("HmacSHA1");
    }
}
